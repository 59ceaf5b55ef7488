//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly: values are computed as nodes
//! are appended, and [`Graph::backward`] walks the tape in reverse. Nodes are
//! appended in creation order, so that order is already topological.

use crate::error::{shape_err, DiffError, Result};
use crate::tensor::{gemm_acc, matmul_into, Tensor};

/// Handle to a node in a [`Graph`].
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
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    XLogX(Var),
    Square(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SegmentSum(Var, usize),
    GatherRows(Var, Vec<usize>),
    PickCols(Var, Vec<usize>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Single-threaded by construction.
#[derive(Default, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` is unreachable from the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches node shape"),
            None => {
                let n = shape.iter().product();
                Tensor::new(shape, vec![0.0; n]).expect("shape is valid")
            }
        }
    }

    pub fn is_reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn unary(v: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = v.data().iter().map(|&x| f(x)).collect();
    Tensor::new(v.shape().to_vec(), data).expect("same shape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    fn check2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = &self.nodes[v.0].value;
        if t.shape().len() != 2 {
            return shape_err(op, format!("expected rank-2 operand, got {:?}", t.shape()));
        }
        Ok(t.dims2())
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.check2(a, "matmul")?;
        let (k2, n) = self.check2(b, "matmul")?;
        if k != k2 {
            return shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]"));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a + bias` with `bias: [1, cols]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.check2(a, "add_row")?;
        let (br, bc) = self.check2(bias, "add_row")?;
        if br != 1 || bc != m {
            return shape_err("add_row", format!("[{n}, {m}] + bias [{br}, {bc}]"));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(m) {
            row.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::AddRow(a, bias), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    fn col_broadcast(&mut self, a: Var, c: Var, name: &'static str) -> Result<(usize, usize)> {
        let (n, m) = self.check2(a, name)?;
        let (cn, cm) = self.check2(c, name)?;
        if cn != n || cm != 1 {
            return shape_err(name, format!("[{n}, {m}] with column [{cn}, {cm}]"));
        }
        Ok((n, m))
    }

    /// Row `i` of `a` scaled by `c[i]`, with `c: [rows, 1]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (n, m) = self.col_broadcast(a, c, "mul_col")?;
        let cv = self.value(c).data();
        let mut out = self.value(a).data().to_vec();
        for (row, &s) in out.chunks_mut(m).zip(cv) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        let rg = self.rg(a) || self.rg(c);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MulCol(a, c), rg))
    }

    /// Row `i` of `a` divided by `c[i]`, with `c: [rows, 1]`.
    pub fn div_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (n, m) = self.col_broadcast(a, c, "div_col")?;
        let cv = self.value(c).data();
        let mut out = self.value(a).data().to_vec();
        for (row, &s) in out.chunks_mut(m).zip(cv) {
            row.iter_mut().for_each(|x| *x /= s);
        }
        let rg = self.rg(a) || self.rg(c);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::DivCol(a, c), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = unary(self.value(a), |x| x * s);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = unary(self.value(a), |x| x + s);
        let rg = self.rg(a);
        self.push(t, Op::AddScalar(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = unary(self.value(a), f64::tanh);
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    /// Clip at zero; the subgradient at the kink is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let t = unary(self.value(a), |x| x.max(0.0));
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = unary(self.value(a), |x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = unary(self.value(a), f64::exp);
        let rg = self.rg(a);
        self.push(t, Op::Exp(a), rg)
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = unary(self.value(a), |x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(t, Op::Clamp(a, lo, hi), rg)
    }

    /// `x ln x`, continuous extension 0 at `x <= 0`.
    pub fn xlogx(&mut self, a: Var) -> Var {
        let t = unary(self.value(a), |x| if x > 0.0 { x * x.ln() } else { 0.0 });
        let rg = self.rg(a);
        self.push(t, Op::XLogX(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = unary(self.value(a), |x| x * x);
        let rg = self.rg(a);
        self.push(t, Op::Square(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.check2(a, "softmax")?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(m) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Softmax(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// `[rows, cols] -> [rows, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.check2(a, "row_sum")?;
        let out = self.value(a).data().chunks(m).map(|r| r.iter().sum()).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n, 1, out)?, Op::RowSum(a), rg))
    }

    /// Sums consecutive blocks of `group` rows: `[n * group, m] -> [n, m]`.
    pub fn segment_sum(&mut self, a: Var, group: usize) -> Result<Var> {
        let (rows, m) = self.check2(a, "segment_sum")?;
        if group == 0 || rows % group != 0 {
            return shape_err("segment_sum", format!("{rows} rows not divisible into groups of {group}"));
        }
        let n = rows / group;
        let src = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for (r, chunk) in src.chunks(m).enumerate() {
            let dst = &mut out[(r / group) * m..(r / group + 1) * m];
            dst.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::SegmentSum(a, group), rg))
    }

    /// Output row `i` is input row `idx[i]`; rows may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, m) = self.check2(a, "gather_rows")?;
        if idx.is_empty() {
            return shape_err("gather_rows", "empty index list");
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return shape_err("gather_rows", format!("row {bad} out of range for {rows} rows"));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in &idx {
            out.extend_from_slice(src.row_slice(i));
        }
        let t = Tensor::matrix(idx.len(), m, out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::GatherRows(a, idx), rg))
    }

    /// Picks `a[i, idx[i]]` for every row: `[rows, cols] -> [rows, 1]`.
    pub fn pick_cols(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, m) = self.check2(a, "pick_cols")?;
        if idx.len() != rows {
            return shape_err("pick_cols", format!("{} indices for {rows} rows", idx.len()));
        }
        if let Some(&bad) = idx.iter().find(|&&c| c >= m) {
            return shape_err("pick_cols", format!("column {bad} out of range for {m} columns"));
        }
        let src = self.value(a);
        let out = idx.iter().enumerate().map(|(r, &c)| src.get(r, c)).collect();
        let t = Tensor::matrix(rows, 1, out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::PickCols(a, idx), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a).clone().reshaped(rows, cols)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_cols", "no operands");
        };
        let (n, _) = self.check2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pm) = self.check2(p, "concat_cols")?;
            if pn != n {
                return shape_err("concat_cols", format!("operand with {pn} rows, expected {n}"));
            }
            widths.push(pm);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(n, total, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_rows", "no operands");
        };
        let (_, m) = self.check2(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (pn, pm) = self.check2(p, "concat_rows")?;
            if pm != m {
                return shape_err("concat_rows", format!("operand with {pm} columns, expected {m}"));
            }
            rows += pn;
        }
        let mut out = Vec::with_capacity(rows * m);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, m, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(DiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(Gradients { grads, shapes });
        }
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let n = self.value(*b).cols();
                    if self.rg(*a) {
                        let ga = acc(&mut grads, *a, m * k);
                        gemm_acc(&g, false, self.value(*b).data(), true, ga, m, n, k);
                    }
                    if self.rg(*b) {
                        let gb = acc(&mut grads, *b, k * n);
                        gemm_acc(self.value(*a).data(), true, &g, false, gb, k, m, n);
                    }
                }
                Op::AddRow(a, bias) => {
                    let m = y.cols();
                    if self.rg(*a) {
                        add_into(acc(&mut grads, *a, g.len()), &g);
                    }
                    if self.rg(*bias) {
                        let gb = acc(&mut grads, *bias, m);
                        for row in g.chunks(m) {
                            gb.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        add_into(acc(&mut grads, *a, g.len()), &g);
                    }
                    if self.rg(*b) {
                        add_into(acc(&mut grads, *b, g.len()), &g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        add_into(acc(&mut grads, *a, g.len()), &g);
                    }
                    if self.rg(*b) {
                        let gb = acc(&mut grads, *b, g.len());
                        gb.iter_mut().zip(&g).for_each(|(d, s)| *d -= s);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let bv = self.value(*b).data();
                        let ga = acc(&mut grads, *a, g.len());
                        for ((d, s), w) in ga.iter_mut().zip(&g).zip(bv) {
                            *d += s * w;
                        }
                    }
                    if self.rg(*b) {
                        let av = self.value(*a).data();
                        let gb = acc(&mut grads, *b, g.len());
                        for ((d, s), w) in gb.iter_mut().zip(&g).zip(av) {
                            *d += s * w;
                        }
                    }
                }
                Op::MulCol(a, c) => {
                    let m = y.cols();
                    let cv = self.value(*c).data();
                    if self.rg(*a) {
                        let ga = acc(&mut grads, *a, g.len());
                        for ((drow, grow), &s) in ga.chunks_mut(m).zip(g.chunks(m)).zip(cv) {
                            drow.iter_mut().zip(grow).for_each(|(d, x)| *d += x * s);
                        }
                    }
                    if self.rg(*c) {
                        let av = self.value(*a).data();
                        let gc = acc(&mut grads, *c, cv.len());
                        for ((d, grow), arow) in gc.iter_mut().zip(g.chunks(m)).zip(av.chunks(m)) {
                            *d += grow.iter().zip(arow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                Op::DivCol(a, c) => {
                    let m = y.cols();
                    let cv = self.value(*c).data();
                    if self.rg(*a) {
                        let ga = acc(&mut grads, *a, g.len());
                        for ((drow, grow), &s) in ga.chunks_mut(m).zip(g.chunks(m)).zip(cv) {
                            drow.iter_mut().zip(grow).for_each(|(d, x)| *d += x / s);
                        }
                    }
                    if self.rg(*c) {
                        // d(a/c)/dc = -(a/c)/c = -y/c
                        let gc = acc(&mut grads, *c, cv.len());
                        for (((d, grow), yrow), &s) in
                            gc.iter_mut().zip(g.chunks(m)).zip(y.data().chunks(m)).zip(cv)
                        {
                            *d -= grow.iter().zip(yrow).map(|(x, y)| x * y).sum::<f64>() / s;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(d, x)| *d += x * s);
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, x), yv) in ga.iter_mut().zip(&g).zip(y.data()) {
                        *d += x * (1.0 - yv * yv);
                    }
                }
                Op::Relu(a) => {
                    let av = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, x), &inp) in ga.iter_mut().zip(&g).zip(av) {
                        if inp > 0.0 {
                            *d += x;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, x), yv) in ga.iter_mut().zip(&g).zip(y.data()) {
                        *d += x * yv * (1.0 - yv);
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, x), yv) in ga.iter_mut().zip(&g).zip(y.data()) {
                        *d += x * yv;
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let av = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, x), &inp) in ga.iter_mut().zip(&g).zip(av) {
                        if inp > *lo && inp < *hi {
                            *d += x;
                        }
                    }
                }
                Op::XLogX(a) => {
                    let av = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, x), &inp) in ga.iter_mut().zip(&g).zip(av) {
                        *d += x * (inp.max(f64::MIN_POSITIVE).ln() + 1.0);
                    }
                }
                Op::Square(a) => {
                    let av = self.value(*a).data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, x), &inp) in ga.iter_mut().zip(&g).zip(av) {
                        *d += 2.0 * x * inp;
                    }
                }
                Op::Softmax(a) => {
                    let m = y.cols();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((drow, grow), yrow) in ga.chunks_mut(m).zip(g.chunks(m)).zip(y.data().chunks(m)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for ((d, x), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (x - dot);
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let ga = acc(&mut grads, *a, n);
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let ga = acc(&mut grads, *a, n);
                    let s = g[0] / n as f64;
                    ga.iter_mut().for_each(|d| *d += s);
                }
                Op::RowSum(a) => {
                    let (n, m) = self.value(*a).dims2();
                    let ga = acc(&mut grads, *a, n * m);
                    for (drow, &x) in ga.chunks_mut(m).zip(&g) {
                        drow.iter_mut().for_each(|d| *d += x);
                    }
                }
                Op::SegmentSum(a, group) => {
                    let (rows, m) = self.value(*a).dims2();
                    let ga = acc(&mut grads, *a, rows * m);
                    for (r, drow) in ga.chunks_mut(m).enumerate() {
                        let src = &g[(r / group) * m..(r / group + 1) * m];
                        drow.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                Op::GatherRows(a, idx) => {
                    let (rows, m) = self.value(*a).dims2();
                    let ga = acc(&mut grads, *a, rows * m);
                    for (grow, &src) in g.chunks(m).zip(idx) {
                        let dst = &mut ga[src * m..(src + 1) * m];
                        dst.iter_mut().zip(grow).for_each(|(d, s)| *d += s);
                    }
                }
                Op::PickCols(a, idx) => {
                    let (rows, m) = self.value(*a).dims2();
                    let ga = acc(&mut grads, *a, rows * m);
                    for (r, (&c, x)) in idx.iter().zip(&g).enumerate() {
                        ga[r * m + c] += x;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = y.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let (n, w) = self.value(p).dims2();
                        if self.rg(p) {
                            let gp = acc(&mut grads, p, n * w);
                            for r in 0..n {
                                let src = &g[r * total + offset..r * total + offset + w];
                                let dst = &mut gp[r * w..(r + 1) * w];
                                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.rg(p) {
                            add_into(acc(&mut grads, p, n), &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let c = g.constant(Tensor::scalar(5.0));
        let loss = g.sum(c);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).item(), 0.0);
        assert!(!grads.is_reached(x));
    }

    #[test]
    fn unreachable_param_gets_zeros() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(2, 3));
        let y = g.param(Tensor::scalar(2.0));
        let loss = g.square(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x), Tensor::zeros(2, 3));
    }

    #[test]
    fn non_scalar_loss_fails() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(DiffError::NonScalarLoss(_))));
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        let s = g.sum(r);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = sum(x * x) through Mul with the same operand twice
        let mut g = Graph::new();
        let x = g.param(Tensor::row(vec![1.0, -2.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[2.0, -4.0]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![0.0, 1.0, 2.0, -5.0, 5.0, 700.0]).unwrap());
        let s = g.softmax(a).unwrap();
        for r in 0..2 {
            let row = g.value(s).row_slice(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn segment_and_gather() {
        let mut g = Graph::new();
        let a = g.param(Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let s = g.segment_sum(a, 2).unwrap();
        assert_eq!(g.value(s).data(), &[3.0, 7.0]);
        let r = g.gather_rows(s, vec![1, 1, 0]).unwrap();
        assert_eq!(g.value(r).data(), &[7.0, 7.0, 3.0]);
        let loss = g.sum(r);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).data(), &[1.0, 1.0, 2.0, 2.0]);
    }
}
