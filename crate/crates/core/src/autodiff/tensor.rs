//! Rank-2 f64 tensors with reverse-mode differentiation.
//!
//! Every tensor is a matrix; scalars are [1, 1], row vectors [1, n], column
//! vectors [n, 1], all row-major. An op whose inputs are all untracked
//! records nothing, so running a forward pass over frozen parameters builds
//! no graph at all. `backward` walks the recorded graph once, in reverse
//! topological order, accumulating gradients into tracked nodes.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Gradient rule recorded by an op. Whatever the rule needs beyond parent
/// and output values is stored inline.
#[derive(Debug)]
enum Rule {
    Leaf,
    Add,
    AddRowwise,
    AddColwise,
    Mul,
    MatMul,
    Scale(f64),
    Neg,
    Tanh,
    Exp,
    Log,
    Powf(f64),
    Sum,
    Mean,
    Reshape,
    SliceRows { start: usize },
    GatherRows(Vec<usize>),
    GatherFlat(Vec<usize>),
    ConcatRows,
    ConcatCols,
    MaskedSoftmax(Vec<bool>),
    LogSumExpCols,
    Focal { y: usize, gamma: f64, alpha: f64 },
}

#[derive(Debug)]
struct Inner {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    parents: Vec<Tensor>,
    rule: Rule,
    tracked: bool,
    name: Option<String>,
    back_done: bool,
}

/// Shared handle to a graph node. Cloning shares the node.
#[derive(Debug)]
pub struct Tensor(Rc<RefCell<Inner>>);

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.shape(),
        rhs: rhs.shape(),
    }
}

impl Tensor {
    fn from_inner(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        rule: Rule,
    ) -> Tensor {
        let tracked = parents.iter().any(Tensor::tracked);
        let (parents, rule) = if tracked {
            (parents, rule)
        } else {
            (Vec::new(), Rule::Leaf)
        };
        Tensor(Rc::new(RefCell::new(Inner {
            rows,
            cols,
            values,
            grad: None,
            parents,
            rule,
            tracked,
            name: None,
            back_done: false,
        })))
    }

    /// Tracked leaf: gradients accumulate here.
    pub fn param(name: &str, rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        assert_eq!(values.len(), rows * cols, "param `{name}` value count");
        let t = Tensor::from_inner(rows, cols, values, Vec::new(), Rule::Leaf);
        t.0.borrow_mut().tracked = true;
        t.0.borrow_mut().name = Some(name.to_string());
        t
    }

    /// Untracked leaf: no gradient, records nothing downstream by itself.
    pub fn constant(rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        assert_eq!(values.len(), rows * cols, "constant value count");
        Tensor::from_inner(rows, cols, values, Vec::new(), Rule::Leaf)
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::constant(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar_const(v: f64) -> Tensor {
        Tensor::constant(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.0.borrow().rows
    }

    pub fn cols(&self) -> usize {
        self.0.borrow().cols
    }

    pub fn shape(&self) -> Vec<usize> {
        let inner = self.0.borrow();
        vec![inner.rows, inner.cols]
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().values.len()
    }

    pub fn tracked(&self) -> bool {
        self.0.borrow().tracked
    }

    pub fn name(&self) -> Option<String> {
        self.0.borrow().name.clone()
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.borrow().values.clone()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let inner = self.0.borrow();
        assert!(r < inner.rows && c < inner.cols, "get({r}, {c}) out of range");
        inner.values[r * inner.cols + c]
    }

    /// Value of a [1, 1] tensor.
    pub fn scalar(&self) -> f64 {
        let inner = self.0.borrow();
        assert_eq!(inner.values.len(), 1, "scalar() on shape {:?}", (inner.rows, inner.cols));
        inner.values[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        let mut inner = self.0.borrow_mut();
        inner.grad = None;
        inner.back_done = false;
    }

    /// Overwrites values in place (same length). Used by the optimizer and
    /// the finite-difference checker.
    pub fn set_values(&self, values: &[f64]) {
        let mut inner = self.0.borrow_mut();
        assert_eq!(inner.values.len(), values.len(), "set_values length");
        inner.values.copy_from_slice(values);
    }

    pub fn set_at(&self, flat: usize, v: f64) {
        self.0.borrow_mut().values[flat] = v;
    }

    pub fn at(&self, flat: usize) -> f64 {
        self.0.borrow().values[flat]
    }

    // ---- ops ----

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.0.borrow(), rhs.0.borrow());
        if a.rows != b.rows || a.cols != b.cols {
            drop(a);
            drop(b);
            return Err(shape_err("add", self, rhs));
        }
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        drop(b);
        Ok(Tensor::from_inner(rows, cols, values, vec![self.clone(), rhs.clone()], Rule::Add))
    }

    /// `[r, c] + [1, c]`, the row vector added to every row.
    pub fn add_rowwise(&self, row: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.0.borrow(), row.0.borrow());
        if b.rows != 1 || b.cols != a.cols {
            drop(a);
            drop(b);
            return Err(shape_err("add_rowwise", self, row));
        }
        let mut values = a.values.clone();
        for r in 0..a.rows {
            for c in 0..a.cols {
                values[r * a.cols + c] += b.values[c];
            }
        }
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        drop(b);
        Ok(Tensor::from_inner(rows, cols, values, vec![self.clone(), row.clone()], Rule::AddRowwise))
    }

    /// `[r, c] + [r, 1]`, the column vector added to every column.
    pub fn add_colwise(&self, col: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.0.borrow(), col.0.borrow());
        if b.cols != 1 || b.rows != a.rows {
            drop(a);
            drop(b);
            return Err(shape_err("add_colwise", self, col));
        }
        let mut values = a.values.clone();
        for r in 0..a.rows {
            for c in 0..a.cols {
                values[r * a.cols + c] += b.values[r];
            }
        }
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        drop(b);
        Ok(Tensor::from_inner(rows, cols, values, vec![self.clone(), col.clone()], Rule::AddColwise))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.0.borrow(), rhs.0.borrow());
        if a.rows != b.rows || a.cols != b.cols {
            drop(a);
            drop(b);
            return Err(shape_err("mul", self, rhs));
        }
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        drop(b);
        Ok(Tensor::from_inner(rows, cols, values, vec![self.clone(), rhs.clone()], Rule::Mul))
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.0.borrow(), rhs.0.borrow());
        if a.cols != b.rows {
            drop(a);
            drop(b);
            return Err(shape_err("matmul", self, rhs));
        }
        let (m, k, n) = (a.rows, a.cols, b.cols);
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a.values[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b.values[p * n..(p + 1) * n];
                let out = &mut values[i * n..(i + 1) * n];
                for j in 0..n {
                    out[j] += aip * brow[j];
                }
            }
        }
        drop(a);
        drop(b);
        Ok(Tensor::from_inner(m, n, values, vec![self.clone(), rhs.clone()], Rule::MatMul))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let a = self.0.borrow();
        let values = a.values.iter().map(|x| x * k).collect();
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        Tensor::from_inner(rows, cols, values, vec![self.clone()], Rule::Scale(k))
    }

    pub fn neg(&self) -> Tensor {
        let a = self.0.borrow();
        let values = a.values.iter().map(|x| -x).collect();
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        Tensor::from_inner(rows, cols, values, vec![self.clone()], Rule::Neg)
    }

    pub fn tanh(&self) -> Tensor {
        let a = self.0.borrow();
        let values = a.values.iter().map(|x| x.tanh()).collect();
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        Tensor::from_inner(rows, cols, values, vec![self.clone()], Rule::Tanh)
    }

    pub fn exp(&self) -> Tensor {
        let a = self.0.borrow();
        let values = a.values.iter().map(|x| x.exp()).collect();
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        Tensor::from_inner(rows, cols, values, vec![self.clone()], Rule::Exp)
    }

    pub fn log(&self) -> Tensor {
        let a = self.0.borrow();
        let values = a.values.iter().map(|x| x.ln()).collect();
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        Tensor::from_inner(rows, cols, values, vec![self.clone()], Rule::Log)
    }

    /// Elementwise x^e. d/dx at x = 0 is taken as 0 so that masked or padded
    /// zeros never produce infinities.
    pub fn powf(&self, e: f64) -> Tensor {
        let a = self.0.borrow();
        let values = a.values.iter().map(|x| x.powf(e)).collect();
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        Tensor::from_inner(rows, cols, values, vec![self.clone()], Rule::Powf(e))
    }

    pub fn sum(&self) -> Tensor {
        let a = self.0.borrow();
        let total: f64 = a.values.iter().sum();
        drop(a);
        Tensor::from_inner(1, 1, vec![total], vec![self.clone()], Rule::Sum)
    }

    pub fn mean(&self) -> Tensor {
        let a = self.0.borrow();
        let total: f64 = a.values.iter().sum();
        let n = a.values.len() as f64;
        drop(a);
        Tensor::from_inner(1, 1, vec![total / n], vec![self.clone()], Rule::Mean)
    }

    /// Row-major reinterpretation; element count must match.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor> {
        let a = self.0.borrow();
        if rows * cols != a.values.len() {
            let lhs = vec![a.rows, a.cols];
            drop(a);
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs,
                rhs: vec![rows, cols],
            });
        }
        let values = a.values.clone();
        drop(a);
        Ok(Tensor::from_inner(rows, cols, values, vec![self.clone()], Rule::Reshape))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let a = self.0.borrow();
        if start + len > a.rows {
            let bound = a.rows;
            drop(a);
            return Err(Error::InvalidIndex {
                op: "slice_rows",
                index: start + len,
                bound,
            });
        }
        let values = a.values[start * a.cols..(start + len) * a.cols].to_vec();
        let cols = a.cols;
        drop(a);
        Ok(Tensor::from_inner(len, cols, values, vec![self.clone()], Rule::SliceRows { start }))
    }

    /// Out row i is parent row `idx[i]`; rows may repeat.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let a = self.0.borrow();
        let mut values = Vec::with_capacity(idx.len() * a.cols);
        for &i in idx {
            if i >= a.rows {
                let bound = a.rows;
                drop(a);
                return Err(Error::InvalidIndex {
                    op: "gather_rows",
                    index: i,
                    bound,
                });
            }
            values.extend_from_slice(&a.values[i * a.cols..(i + 1) * a.cols]);
        }
        let cols = a.cols;
        drop(a);
        Ok(Tensor::from_inner(
            idx.len(),
            cols,
            values,
            vec![self.clone()],
            Rule::GatherRows(idx.to_vec()),
        ))
    }

    /// Row vector of elements picked by flat row-major index.
    pub fn gather_flat(&self, idx: &[usize]) -> Result<Tensor> {
        let a = self.0.borrow();
        let mut values = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= a.values.len() {
                let bound = a.values.len();
                drop(a);
                return Err(Error::InvalidIndex {
                    op: "gather_flat",
                    index: i,
                    bound,
                });
            }
            values.push(a.values[i]);
        }
        drop(a);
        Ok(Tensor::from_inner(
            1,
            idx.len(),
            values,
            vec![self.clone()],
            Rule::GatherFlat(idx.to_vec()),
        ))
    }

    /// Vertical stack; all parts share a column count.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = parts[0].cols();
        let mut rows = 0;
        let mut values = Vec::new();
        for p in parts {
            if p.cols() != cols {
                return Err(shape_err("concat_rows", parts[0], p));
            }
            rows += p.rows();
            values.extend_from_slice(&p.0.borrow().values);
        }
        Ok(Tensor::from_inner(
            rows,
            cols,
            values,
            parts.iter().map(|p| (*p).clone()).collect(),
            Rule::ConcatRows,
        ))
    }

    /// Horizontal stack; all parts share a row count.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = parts[0].rows();
        let mut cols = 0;
        for p in parts {
            if p.rows() != rows {
                return Err(shape_err("concat_cols", parts[0], p));
            }
            cols += p.cols();
        }
        let mut values = vec![0.0; rows * cols];
        let mut offset = 0;
        for p in parts {
            let inner = p.0.borrow();
            for r in 0..rows {
                let src = &inner.values[r * inner.cols..(r + 1) * inner.cols];
                values[r * cols + offset..r * cols + offset + inner.cols].copy_from_slice(src);
            }
            offset += inner.cols;
        }
        Ok(Tensor::from_inner(
            rows,
            cols,
            values,
            parts.iter().map(|p| (*p).clone()).collect(),
            Rule::ConcatCols,
        ))
    }

    /// Per-row softmax where masked columns get probability exactly 0.
    /// `mask[c] == true` keeps column c. A row with nothing kept is an error.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Tensor> {
        let a = self.0.borrow();
        if mask.len() != a.cols {
            let lhs = vec![a.rows, a.cols];
            drop(a);
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                lhs,
                rhs: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            drop(a);
            return Err(Error::AllMasked(0));
        }
        let mut values = vec![0.0; a.values.len()];
        for r in 0..a.rows {
            let row = &a.values[r * a.cols..(r + 1) * a.cols];
            let mut mx = f64::NEG_INFINITY;
            for (c, &keep) in mask.iter().enumerate() {
                if keep && row[c] > mx {
                    mx = row[c];
                }
            }
            let mut denom = 0.0;
            for (c, &keep) in mask.iter().enumerate() {
                if keep {
                    denom += (row[c] - mx).exp();
                }
            }
            let out = &mut values[r * a.cols..(r + 1) * a.cols];
            for (c, &keep) in mask.iter().enumerate() {
                if keep {
                    out[c] = (row[c] - mx).exp() / denom;
                }
            }
        }
        let (rows, cols) = (a.rows, a.cols);
        drop(a);
        Ok(Tensor::from_inner(
            rows,
            cols,
            values,
            vec![self.clone()],
            Rule::MaskedSoftmax(mask.to_vec()),
        ))
    }

    /// Column-wise log-sum-exp: `[r, c]` collapses to `[1, c]` with
    /// `out[j] = log(sum_i exp(x[i, j]))`, max-subtracted for stability.
    pub fn log_sum_exp_cols(&self) -> Tensor {
        let a = self.0.borrow();
        let mut values = vec![0.0; a.cols];
        for j in 0..a.cols {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..a.rows {
                let v = a.values[i * a.cols + j];
                if v > mx {
                    mx = v;
                }
            }
            if !mx.is_finite() {
                values[j] = mx;
                continue;
            }
            let mut s = 0.0;
            for i in 0..a.rows {
                s += (a.values[i * a.cols + j] - mx).exp();
            }
            values[j] = mx + s.ln();
        }
        let cols = a.cols;
        drop(a);
        Tensor::from_inner(1, cols, values, vec![self.clone()], Rule::LogSumExpCols)
    }

    /// Focal loss straight from a `[1, n]` row of logits:
    /// softmax, then `-alpha * (1 - p_y)^gamma * ln(max(p_y, 1e-12))`.
    /// The clamp applies to the log argument only.
    pub fn focal_from_logits(&self, y: usize, gamma: f64, alpha: f64) -> Result<Tensor> {
        let a = self.0.borrow();
        if a.rows != 1 {
            let lhs = vec![a.rows, a.cols];
            let rhs = vec![1, a.cols];
            drop(a);
            return Err(Error::ShapeMismatch {
                op: "focal_from_logits",
                lhs,
                rhs,
            });
        }
        if y >= a.cols {
            let bound = a.cols;
            drop(a);
            return Err(Error::InvalidIndex {
                op: "focal_from_logits",
                index: y,
                bound,
            });
        }
        let p = softmax_row(&a.values);
        drop(a);
        let loss = focal_term(p[y], gamma, alpha);
        Ok(Tensor::from_inner(
            1,
            1,
            vec![loss],
            vec![self.clone()],
            Rule::Focal { y, gamma, alpha },
        ))
    }

    // ---- backward ----

    /// Reverse-mode gradient accumulation from this scalar into every
    /// tracked ancestor. Errs on non-scalars and on a second call.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.0.borrow();
            if inner.values.len() != 1 {
                return Err(Error::NonScalarLoss(vec![inner.rows, inner.cols]));
            }
            if inner.back_done {
                return Err(Error::BackwardTwice);
            }
        }
        self.0.borrow_mut().back_done = true;
        if !self.tracked() {
            return Ok(());
        }

        let order = topo_order(self);
        {
            let mut inner = self.0.borrow_mut();
            let g = inner.grad.get_or_insert_with(|| vec![0.0; 1]);
            g[0] += 1.0;
        }
        for node in order.iter().rev() {
            node.apply_rule();
        }
        Ok(())
    }

    fn accumulate(&self, contribution: &[f64]) {
        let mut inner = self.0.borrow_mut();
        if !inner.tracked {
            return;
        }
        let n = inner.values.len();
        debug_assert_eq!(n, contribution.len());
        let g = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (gi, ci) in g.iter_mut().zip(contribution) {
            *gi += ci;
        }
    }

    /// Pushes this node's gradient into its parents. Contributions are
    /// computed before any parent is mutated so an op may use one tensor as
    /// both operands.
    fn apply_rule(&self) {
        let (g, rows, cols) = {
            let inner = self.0.borrow();
            let g = match &inner.grad {
                Some(g) => g.clone(),
                None => return,
            };
            (g, inner.rows, inner.cols)
        };
        let inner = self.0.borrow();
        match &inner.rule {
            Rule::Leaf => {}
            Rule::Add => {
                let p0 = inner.parents[0].clone();
                let p1 = inner.parents[1].clone();
                drop(inner);
                p0.accumulate(&g);
                p1.accumulate(&g);
            }
            Rule::AddRowwise => {
                let p0 = inner.parents[0].clone();
                let p1 = inner.parents[1].clone();
                drop(inner);
                let mut gb = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        gb[c] += g[r * cols + c];
                    }
                }
                p0.accumulate(&g);
                p1.accumulate(&gb);
            }
            Rule::AddColwise => {
                let p0 = inner.parents[0].clone();
                let p1 = inner.parents[1].clone();
                drop(inner);
                let mut gb = vec![0.0; rows];
                for r in 0..rows {
                    for c in 0..cols {
                        gb[r] += g[r * cols + c];
                    }
                }
                p0.accumulate(&g);
                p1.accumulate(&gb);
            }
            Rule::Mul => {
                let p0 = inner.parents[0].clone();
                let p1 = inner.parents[1].clone();
                drop(inner);
                let a = p0.values();
                let b = p1.values();
                let ga: Vec<f64> = g.iter().zip(&b).map(|(gi, bi)| gi * bi).collect();
                let gb: Vec<f64> = g.iter().zip(&a).map(|(gi, ai)| gi * ai).collect();
                p0.accumulate(&ga);
                p1.accumulate(&gb);
            }
            Rule::MatMul => {
                let p0 = inner.parents[0].clone();
                let p1 = inner.parents[1].clone();
                drop(inner);
                let a = p0.values();
                let b = p1.values();
                let (m, k) = (p0.rows(), p0.cols());
                let n = p1.cols();
                // gA = g . B^T
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * b[p * n + j];
                        }
                    }
                }
                // gB = A^T . g
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = a[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                p0.accumulate(&ga);
                p1.accumulate(&gb);
            }
            Rule::Scale(k) => {
                let k = *k;
                let p0 = inner.parents[0].clone();
                drop(inner);
                let ga: Vec<f64> = g.iter().map(|gi| gi * k).collect();
                p0.accumulate(&ga);
            }
            Rule::Neg => {
                let p0 = inner.parents[0].clone();
                drop(inner);
                let ga: Vec<f64> = g.iter().map(|gi| -gi).collect();
                p0.accumulate(&ga);
            }
            Rule::Tanh => {
                let p0 = inner.parents[0].clone();
                let y = inner.values.clone();
                drop(inner);
                let ga: Vec<f64> = g.iter().zip(&y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                p0.accumulate(&ga);
            }
            Rule::Exp => {
                let p0 = inner.parents[0].clone();
                let y = inner.values.clone();
                drop(inner);
                let ga: Vec<f64> = g.iter().zip(&y).map(|(gi, yi)| gi * yi).collect();
                p0.accumulate(&ga);
            }
            Rule::Log => {
                let p0 = inner.parents[0].clone();
                drop(inner);
                let x = p0.values();
                let ga: Vec<f64> = g.iter().zip(&x).map(|(gi, xi)| gi / xi).collect();
                p0.accumulate(&ga);
            }
            Rule::Powf(e) => {
                let e = *e;
                let p0 = inner.parents[0].clone();
                drop(inner);
                let x = p0.values();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(&x)
                    .map(|(gi, xi)| {
                        if *xi == 0.0 {
                            0.0
                        } else {
                            gi * e * xi.powf(e - 1.0)
                        }
                    })
                    .collect();
                p0.accumulate(&ga);
            }
            Rule::Sum => {
                let p0 = inner.parents[0].clone();
                drop(inner);
                let ga = vec![g[0]; p0.numel()];
                p0.accumulate(&ga);
            }
            Rule::Mean => {
                let p0 = inner.parents[0].clone();
                drop(inner);
                let n = p0.numel();
                let ga = vec![g[0] / n as f64; n];
                p0.accumulate(&ga);
            }
            Rule::Reshape => {
                let p0 = inner.parents[0].clone();
                drop(inner);
                p0.accumulate(&g);
            }
            Rule::SliceRows { start } => {
                let start = *start;
                let p0 = inner.parents[0].clone();
                drop(inner);
                let mut ga = vec![0.0; p0.numel()];
                ga[start * cols..start * cols + g.len()].copy_from_slice(&g);
                p0.accumulate(&ga);
            }
            Rule::GatherRows(idx) => {
                let idx = idx.clone();
                let p0 = inner.parents[0].clone();
                drop(inner);
                let mut ga = vec![0.0; p0.numel()];
                for (out_r, &src_r) in idx.iter().enumerate() {
                    for c in 0..cols {
                        ga[src_r * cols + c] += g[out_r * cols + c];
                    }
                }
                p0.accumulate(&ga);
            }
            Rule::GatherFlat(idx) => {
                let idx = idx.clone();
                let p0 = inner.parents[0].clone();
                drop(inner);
                let mut ga = vec![0.0; p0.numel()];
                for (out_i, &src_i) in idx.iter().enumerate() {
                    ga[src_i] += g[out_i];
                }
                p0.accumulate(&ga);
            }
            Rule::ConcatRows => {
                let parents: Vec<Tensor> = inner.parents.clone();
                drop(inner);
                let mut offset = 0;
                for p in parents {
                    let n = p.numel();
                    p.accumulate(&g[offset..offset + n]);
                    offset += n;
                }
            }
            Rule::ConcatCols => {
                let parents: Vec<Tensor> = inner.parents.clone();
                drop(inner);
                let mut col_offset = 0;
                for p in parents {
                    let pc = p.cols();
                    let mut ga = vec![0.0; rows * pc];
                    for r in 0..rows {
                        ga[r * pc..(r + 1) * pc]
                            .copy_from_slice(&g[r * cols + col_offset..r * cols + col_offset + pc]);
                    }
                    p.accumulate(&ga);
                    col_offset += pc;
                }
            }
            Rule::MaskedSoftmax(mask) => {
                let mask = mask.clone();
                let p0 = inner.parents[0].clone();
                let y = inner.values.clone();
                drop(inner);
                let mut ga = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                    for c in 0..cols {
                        if mask[c] {
                            ga[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                }
                p0.accumulate(&ga);
            }
            Rule::LogSumExpCols => {
                let p0 = inner.parents[0].clone();
                let y = inner.values.clone();
                drop(inner);
                let x = p0.values();
                let prows = p0.rows();
                let mut ga = vec![0.0; x.len()];
                for j in 0..cols {
                    for i in 0..prows {
                        ga[i * cols + j] = g[j] * (x[i * cols + j] - y[j]).exp();
                    }
                }
                p0.accumulate(&ga);
            }
            Rule::Focal { y, gamma, alpha } => {
                let (y, gamma, alpha) = (*y, *gamma, *alpha);
                let p0 = inner.parents[0].clone();
                drop(inner);
                let p = softmax_row(&p0.values());
                let q = p[y];
                let dldq = focal_dloss_dq(q, gamma, alpha);
                let mut ga = vec![0.0; p.len()];
                for (j, pj) in p.iter().enumerate() {
                    let delta = if j == y { 1.0 } else { 0.0 };
                    ga[j] = g[0] * dldq * q * (delta - pj);
                }
                p0.accumulate(&ga);
            }
        }
    }
}

/// Plain softmax over one row, max-subtracted.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// The focal term for one true-class probability.
/// `-alpha * (1 - q)^gamma * ln(max(q, 1e-12))`.
pub fn focal_term(q: f64, gamma: f64, alpha: f64) -> f64 {
    -alpha * (1.0 - q).max(0.0).powf(gamma) * q.max(1e-12).ln()
}

/// d(focal_term)/dq. At q = 1 both pieces vanish for gamma > 0; below the
/// log clamp the loss is flat in q.
fn focal_dloss_dq(q: f64, gamma: f64, alpha: f64) -> f64 {
    let one_minus = (1.0 - q).max(0.0);
    let q_c = q.max(1e-12);
    let mut d = 0.0;
    if gamma != 0.0 && one_minus > 0.0 {
        d += alpha * gamma * one_minus.powf(gamma - 1.0) * q_c.ln();
    }
    if q > 1e-12 {
        d -= alpha * one_minus.powf(gamma) / q_c;
    }
    d
}

/// Post-order over tracked nodes reachable from `root` through parents,
/// iterative to keep deep chains off the call stack.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    enum Walk {
        Enter(Tensor),
        Exit(Tensor),
    }
    let mut seen: HashSet<usize> = HashSet::new();
    let mut order = Vec::new();
    let mut stack = vec![Walk::Enter(root.clone())];
    while let Some(step) = stack.pop() {
        match step {
            Walk::Enter(t) => {
                let key = Rc::as_ptr(&t.0) as usize;
                if !seen.insert(key) {
                    continue;
                }
                let parents: Vec<Tensor> = t
                    .0
                    .borrow()
                    .parents
                    .iter()
                    .filter(|p| p.tracked())
                    .cloned()
                    .collect();
                stack.push(Walk::Exit(t));
                for p in parents {
                    stack.push(Walk::Enter(p));
                }
            }
            Walk::Exit(t) => order.push(t),
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untracked_ops_record_no_graph() {
        let a = Tensor::constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = a.tanh().sum();
        assert!(!b.tracked());
        assert!(b.0.borrow().parents.is_empty());
    }

    #[test]
    fn tracked_propagates() {
        let a = Tensor::param("a", 1, 2, vec![1.0, 2.0]);
        let b = Tensor::constant(1, 2, vec![3.0, 4.0]);
        let c = a.add(&b).unwrap();
        assert!(c.tracked());
    }

    #[test]
    fn add_shape_mismatch() {
        let a = Tensor::zeros(2, 2);
        let b = Tensor::zeros(2, 3);
        assert!(matches!(a.add(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_values() {
        let a = Tensor::constant(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::constant(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.values(), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let a = Tensor::param("a", 1, 2, vec![1.0, 2.0]);
        let b = a.tanh();
        assert!(matches!(b.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let a = Tensor::param("a", 1, 1, vec![2.0]);
        let loss = a.tanh().sum();
        loss.backward().unwrap();
        assert!(matches!(loss.backward(), Err(Error::BackwardTwice)));
    }

    #[test]
    fn simple_chain_gradient() {
        // loss = sum(a * a), d/da = 2a
        let a = Tensor::param("a", 1, 3, vec![1.0, -2.0, 3.0]);
        let loss = a.mul(&a).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum(a) + sum(a) => grad 2 everywhere
        let a = Tensor::param("a", 2, 1, vec![1.0, 1.0]);
        let s = a.sum();
        let loss = s.add(&s).unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let a = Tensor::param("a", 1, 1, vec![3.0]);
        a.scale(2.0).sum().backward().unwrap();
        a.scale(2.0).sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![4.0]);
        a.zero_grad();
        assert!(a.grad().is_none());
    }

    #[test]
    fn log_sum_exp_extreme_inputs() {
        let x = Tensor::constant(2, 1, vec![1000.0, 1000.0]);
        let y = x.log_sum_exp_cols();
        let expected = 1000.0 + std::f64::consts::LN_2;
        assert!((y.scalar() - expected).abs() < 1e-9, "{}", y.scalar());
    }

    #[test]
    fn log_sum_exp_matches_naive_in_safe_range() {
        let x = Tensor::constant(3, 2, vec![0.1, -0.3, 0.7, 1.1, -2.0, 0.4]);
        let y = x.log_sum_exp_cols();
        for j in 0..2 {
            let naive: f64 = (0..3).map(|i| x.get(i, j).exp()).sum::<f64>().ln();
            assert!((y.get(0, j) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_and_sums_to_one() {
        let x = Tensor::constant(2, 3, vec![0.5, 100.0, -0.5, 1.0, 50.0, 2.0]);
        let y = x.masked_softmax(&[true, false, true]).unwrap();
        for r in 0..2 {
            assert_eq!(y.get(r, 1), 0.0);
            let s = y.get(r, 0) + y.get(r, 2);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_all_masked_errors() {
        let x = Tensor::zeros(1, 2);
        assert!(matches!(
            x.masked_softmax(&[false, false]),
            Err(Error::AllMasked(_))
        ));
    }

    #[test]
    fn focal_forward_spot_values() {
        // gamma 0.5, p = (0.5, 0.5), true class 1: sqrt(0.5) * ln 2
        let logits = Tensor::constant(1, 2, vec![0.0, 0.0]);
        let loss = logits.focal_from_logits(1, 0.5, 1.0).unwrap();
        let expected = 0.5f64.sqrt() * std::f64::consts::LN_2;
        assert!((loss.scalar() - expected).abs() < 1e-12);
        assert!((expected - 0.49013).abs() < 1e-5);
    }

    #[test]
    fn focal_gamma_two_spot_value() {
        // p = (0.1, 0.9), true class 1, gamma 2: 0.01 * (-ln 0.9)
        let l1 = 0.1f64.ln();
        let l2 = 0.9f64.ln();
        let logits = Tensor::constant(1, 2, vec![l1, l2]);
        let loss = logits.focal_from_logits(1, 2.0, 1.0).unwrap();
        let expected = 0.01 * -(0.9f64.ln());
        assert!((loss.scalar() - expected).abs() < 1e-12);
        assert!((expected - 0.0010536).abs() < 1e-7);
    }

    #[test]
    fn focal_handles_certain_prediction() {
        // Extreme logits drive p_y to 1; loss and gradient must stay finite.
        let logits = Tensor::param("l", 1, 2, vec![-400.0, 400.0]);
        let loss = logits.focal_from_logits(1, 0.5, 1.0).unwrap();
        assert!(loss.scalar().abs() < 1e-12);
        loss.backward().unwrap();
        for gi in logits.grad().unwrap() {
            assert!(gi.is_finite());
        }
    }

    #[test]
    fn focal_clamps_vanishing_probability() {
        let logits = Tensor::param("l", 1, 2, vec![400.0, -400.0]);
        let loss = logits.focal_from_logits(1, 2.0, 1.0).unwrap();
        // p_y ~ 0, clamped at 1e-12: loss = -(1-0)^2 * ln(1e-12)
        let expected = -(1e-12f64).ln();
        assert!((loss.scalar() - expected).abs() < 1e-6);
        loss.backward().unwrap();
        for gi in logits.grad().unwrap() {
            assert!(gi.is_finite());
        }
    }

    #[test]
    fn powf_zero_base_gradient_is_zero() {
        let a = Tensor::param("a", 1, 2, vec![0.0, 4.0]);
        let loss = a.powf(0.5).sum();
        loss.backward().unwrap();
        let g = a.grad().unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn gather_flat_roundtrip() {
        let a = Tensor::param("a", 2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let picked = a.gather_flat(&[5, 0, 5]).unwrap();
        assert_eq!(picked.values(), vec![5.0, 0.0, 5.0]);
        picked.sum().backward().unwrap();
        let g = a.grad().unwrap();
        assert_eq!(g, vec![1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn concat_cols_layout() {
        let a = Tensor::constant(2, 1, vec![1.0, 3.0]);
        let b = Tensor::constant(2, 2, vec![10.0, 20.0, 30.0, 40.0]);
        let c = Tensor::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.values(), vec![1.0, 10.0, 20.0, 3.0, 30.0, 40.0]);
    }

    #[test]
    fn slice_rows_bounds_checked() {
        let a = Tensor::zeros(3, 2);
        assert!(matches!(
            a.slice_rows(2, 2),
            Err(Error::InvalidIndex { .. })
        ));
    }
}
