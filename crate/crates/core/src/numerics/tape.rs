//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation evaluates eagerly and records its inputs; `backward` walks
//! the tape from the root in reverse creation order, so a node is always
//! visited after every node that consumed it.

use super::tensor::{log_sum_exp, softmax, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    SegmentMean(Var, Vec<Vec<usize>>),
    SelectRows(Vec<bool>, Var, Var),
    SoftmaxRows(Var),
    SqDist(Var, Var),
    SoftmaxCrossEntropy(Var, Vec<usize>),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradient of a scalar root with respect to every node on the tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const SQRT_FLOOR: f64 = 1e-12;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Rank-1 tensors are stored as a single row.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let value = if value.shape().len() == 1 {
            let n = value.len();
            value.reshape(vec![1, n]).expect("same element count")
        } else {
            value
        };
        self.push(value, Op::Leaf)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|v| scale * v + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).tanh();
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).sigmoid();
        self.push(out, Op::Sigmoid(a))
    }

    /// Elementwise square root, clamped below at 1e-12.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(SQRT_FLOOR).sqrt());
        self.push(out, Op::Sqrt(a))
    }

    /// Adds the row vector `b` (`1 x m`) to every row of `a` (`n x m`).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims(a)?;
        let (br, bc) = self.dims(b)?;
        if br != 1 || bc != m {
            return Err(Error::dim(
                "add_row",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut out = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for i in 0..n {
            for (o, bv) in out.data_mut()[i * m..(i + 1) * m].iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, b)))
    }

    /// Multiplies row `i` of `a` (`n x m`) by `col[i]` (`col` is `n x 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, m) = self.dims(a)?;
        let (cr, cc) = self.dims(col)?;
        if cr != n || cc != 1 {
            return Err(Error::dim(
                "mul_col",
                self.value(a).shape(),
                self.value(col).shape(),
            ));
        }
        let mut out = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for i in 0..n {
            for o in &mut out.data_mut()[i * m..(i + 1) * m] {
                *o *= c[i];
            }
        }
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, p) = self.dims(a)?;
        let (n2, q) = self.dims(b)?;
        if n != n2 {
            return Err(Error::dim(
                "concat_cols",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            data.extend_from_slice(&av[i * p..(i + 1) * p]);
            data.extend_from_slice(&bv[i * q..(i + 1) * q]);
        }
        let out = Tensor::matrix(n, p + q, data)?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Vertical concatenation of tensors sharing a column count.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("stack_rows of nothing".into()))?;
        let cols = self.dims(*first)?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if c != cols {
                return Err(Error::dim(
                    "stack_rows",
                    &[rows, cols],
                    self.value(p).shape(),
                ));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let out = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::StackRows(parts.to_vec())))
    }

    /// Row `g` of the output is the mean of the rows of `a` listed in `groups[g]`.
    pub fn segment_mean(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (n, m) = self.dims(a)?;
        let av = self.value(a).data();
        let mut data = vec![0.0; groups.len() * m];
        for (g, rows) in groups.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::Domain("segment_mean over an empty group".into()));
            }
            let out = &mut data[g * m..(g + 1) * m];
            for &r in rows {
                if r >= n {
                    return Err(Error::Contract(format!(
                        "row {r} out of range for {n} rows"
                    )));
                }
                for (o, v) in out.iter_mut().zip(&av[r * m..(r + 1) * m]) {
                    *o += v;
                }
            }
            let inv = 1.0 / rows.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let out = Tensor::matrix(groups.len(), m, data)?;
        Ok(self.push(out, Op::SegmentMean(a, groups.to_vec())))
    }

    /// Row `i` comes from `a` where `mask[i]`, otherwise from `b`.
    pub fn select_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims(a)?;
        if self.value(a).shape() != self.value(b).shape() || mask.len() != n {
            return Err(Error::dim(
                "select_rows",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut data = Vec::with_capacity(n * m);
        for (i, &take_a) in mask.iter().enumerate() {
            let src = if take_a { self.value(a) } else { self.value(b) };
            data.extend_from_slice(src.row_slice(i));
        }
        let out = Tensor::matrix(n, m, data)?;
        Ok(self.push(out, Op::SelectRows(mask.to_vec(), a, b)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.dims(a)?;
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            data.extend(softmax(self.value(a).row_slice(i))?);
        }
        let out = Tensor::matrix(n, m, data)?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Pairwise squared Euclidean distances between rows: `n x d`, `m x d` -> `n x m`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.dims(a)?;
        let (m, d2) = self.dims(b)?;
        if d != d2 {
            return Err(Error::dim(
                "sq_dist",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let ai = av.row_slice(i);
            for j in 0..m {
                data.push(
                    ai.iter()
                        .zip(bv.row_slice(j))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum(),
                );
            }
        }
        let out = Tensor::matrix(n, m, data)?;
        Ok(self.push(out, Op::SqDist(a, b)))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, m) = self.dims(logits)?;
        if targets.len() != n || n == 0 {
            return Err(Error::dim(
                "softmax_cross_entropy",
                &[n, m],
                &[targets.len()],
            ));
        }
        let lv = self.value(logits);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= m {
                return Err(Error::Contract(format!(
                    "target {t} out of range for {m} classes"
                )));
            }
            let row = lv.row_slice(i);
            total += log_sum_exp(row) - row[t];
        }
        let out = Tensor::scalar(total / n as f64);
        Ok(self.push(out, Op::SoftmaxCrossEntropy(logits, targets.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Gradients of the scalar `root` with respect to every recorded node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar root of shape {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(root_val.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let da = g.matmul(&bv.transpose()?)?;
                    let db = av.transpose()?.matmul(&g)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()?),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, g.mul(self.value(*b))?);
                    acc(&mut grads, *b, g.mul(self.value(*a))?);
                }
                Op::Affine(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Tanh(a) => {
                    let d = g.zip(&node.value, "tanh", |gi, y| gi * (1.0 - y * y))?;
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.zip(&node.value, "sigmoid", |gi, y| gi * y * (1.0 - y))?;
                    acc(&mut grads, *a, d);
                }
                Op::Sqrt(a) => {
                    let x = self.value(*a);
                    let mut d = g.zip(&node.value, "sqrt", |gi, y| gi / (2.0 * y))?;
                    for (di, xi) in d.data_mut().iter_mut().zip(x.data()) {
                        if *xi <= SQRT_FLOOR {
                            *di = 0.0;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::AddRow(a, b) => {
                    let (n, m) = g.dims2()?;
                    let mut db = vec![0.0; m];
                    for i in 0..n {
                        for (s, v) in db.iter_mut().zip(g.row_slice(i)) {
                            *s += v;
                        }
                    }
                    acc(&mut grads, *b, Tensor::matrix(1, m, db)?);
                    acc(&mut grads, *a, g.clone());
                }
                Op::MulCol(a, col) => {
                    let (n, m) = g.dims2()?;
                    let av = self.value(*a);
                    let cv = self.value(*col).data();
                    let mut da = g.clone();
                    let mut dc = vec![0.0; n];
                    for i in 0..n {
                        let gi = g.row_slice(i);
                        dc[i] = gi.iter().zip(av.row_slice(i)).map(|(x, y)| x * y).sum();
                        for v in &mut da.data_mut()[i * m..(i + 1) * m] {
                            *v *= cv[i];
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *col, Tensor::matrix(n, 1, dc)?);
                }
                Op::ConcatCols(a, b) => {
                    let (n, _) = g.dims2()?;
                    let p = self.value(*a).cols();
                    let q = self.value(*b).cols();
                    let mut da = Vec::with_capacity(n * p);
                    let mut db = Vec::with_capacity(n * q);
                    for i in 0..n {
                        let row = g.row_slice(i);
                        da.extend_from_slice(&row[..p]);
                        db.extend_from_slice(&row[p..]);
                    }
                    acc(&mut grads, *a, Tensor::matrix(n, p, da)?);
                    acc(&mut grads, *b, Tensor::matrix(n, q, db)?);
                }
                Op::StackRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        let slice = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        acc(&mut grads, *p, Tensor::matrix(r, cols, slice)?);
                        offset += r;
                    }
                }
                Op::SegmentMean(a, groups) => {
                    let (n, m) = self.dims(*a)?;
                    let mut da = Tensor::zeros(&[n, m]);
                    for (gi, rows) in groups.iter().enumerate() {
                        let inv = 1.0 / rows.len() as f64;
                        let src = g.row_slice(gi).to_vec();
                        for &r in rows {
                            for (d, s) in da.data_mut()[r * m..(r + 1) * m].iter_mut().zip(&src) {
                                *d += s * inv;
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SelectRows(mask, a, b) => {
                    let (n, m) = g.dims2()?;
                    let mut da = Tensor::zeros(&[n, m]);
                    let mut db = Tensor::zeros(&[n, m]);
                    for (i, &take_a) in mask.iter().enumerate() {
                        let dst = if take_a { &mut da } else { &mut db };
                        dst.data_mut()[i * m..(i + 1) * m].copy_from_slice(g.row_slice(i));
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::SoftmaxRows(a) => {
                    let (n, m) = g.dims2()?;
                    let y = &node.value;
                    let mut da = Vec::with_capacity(n * m);
                    for i in 0..n {
                        let (gi, yi) = (g.row_slice(i), y.row_slice(i));
                        let dot: f64 = gi.iter().zip(yi).map(|(a, b)| a * b).sum();
                        da.extend(gi.iter().zip(yi).map(|(gv, yv)| yv * (gv - dot)));
                    }
                    acc(&mut grads, *a, Tensor::matrix(n, m, da)?);
                }
                Op::SqDist(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, d) = av.dims2()?;
                    let m = bv.rows();
                    let mut da = vec![0.0; n * d];
                    let mut db = vec![0.0; m * d];
                    for i in 0..n {
                        let ai = av.row_slice(i);
                        for j in 0..m {
                            let gij = g.get(i, j);
                            if gij == 0.0 {
                                continue;
                            }
                            let bj = bv.row_slice(j);
                            for k in 0..d {
                                let diff = 2.0 * gij * (ai[k] - bj[k]);
                                da[i * d + k] += diff;
                                db[j * d + k] -= diff;
                            }
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(n, d, da)?);
                    acc(&mut grads, *b, Tensor::matrix(m, d, db)?);
                }
                Op::SoftmaxCrossEntropy(logits, targets) => {
                    let lv = self.value(*logits);
                    let (n, m) = lv.dims2()?;
                    let scale = g.item()? / n as f64;
                    let mut d = Vec::with_capacity(n * m);
                    for (i, &t) in targets.iter().enumerate() {
                        let p = softmax(lv.row_slice(i))?;
                        d.extend(p.iter().enumerate().map(|(k, &pk)| {
                            let y = if k == t { 1.0 } else { 0.0 };
                            (pk - y) * scale
                        }));
                    }
                    acc(&mut grads, *logits, Tensor::matrix(n, m, d)?);
                }
                Op::Sum(a) => {
                    let s = g.item()?;
                    acc(&mut grads, *a, Tensor::filled(self.value(*a).shape(), s));
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
