//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] owns every node created during a forward pass. Nodes are
//! appended in creation order, so parents always precede children and the
//! graph is acyclic by construction. [`Tape::backward`] walks the tape in
//! reverse once and accumulates gradients into every node that depends on a
//! differentiable leaf.
//!
//! Shapes are two-dimensional. Axis `0` runs over rows, axis `1` over
//! columns. There is no broadcasting except multiplication by a constant
//! scalar ([`Tape::scale`]); replicating a row across `n` rows is done with a
//! matmul against an `n × 1` column of ones.

mod gradcheck;
mod matrix;

pub use gradcheck::{central_difference, gradient_check};
pub use matrix::Matrix;

use crate::error::{Error, Result};
use crate::infotheory::PROB_FLOOR;
use matrix::{gemm_nt, gemm_tn};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction / concatenation axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Across rows (e.g. over points).
    Rows,
    /// Across columns (e.g. over classes).
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Sum(Var),
    MaxReduce {
        input: Var,
        axis: Axis,
        argmax: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: Axis,
    },
    Softmax {
        input: Var,
        axis: Axis,
    },
    SelectRows {
        input: Var,
        rows: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    /// Gradient of the last [`backward`](Self::backward) output with respect
    /// to `v`. All zeros before `backward` or for constants.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.as_slice().iter().map(|&v| f(v)).collect();
        let value = Matrix::new(src.rows(), src.cols(), data).expect("shape preserved");
        let rg = self.needs(&[x]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Matrix::new(va.rows(), va.cols(), data).expect("shape preserved");
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.binary(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.binary(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.binary(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// Natural log with the argument floored at [`PROB_FLOOR`]; the gradient
    /// is zero below the floor.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.max(PROB_FLOOR).ln())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.as_slice().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Matrix::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of all entries as a `1 × 1` node.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Maximum along `axis`. `Rows` reduces `n × f` to `1 × f`; `Cols`
    /// reduces to `n × 1`. Ties resolve to the lowest index.
    pub fn max_reduce(&mut self, x: Var, axis: Axis) -> Var {
        let m = &self.nodes[x.0].value;
        let (rows, cols) = m.shape();
        let (value, argmax) = match axis {
            Axis::Rows => {
                let mut best = m.row(0).to_vec();
                let mut arg = vec![0usize; cols];
                for r in 1..rows {
                    for (c, &v) in m.row(r).iter().enumerate() {
                        if v > best[c] {
                            best[c] = v;
                            arg[c] = r;
                        }
                    }
                }
                (Matrix::new(1, cols, best), arg)
            }
            Axis::Cols => {
                let mut best = Vec::with_capacity(rows);
                let mut arg = Vec::with_capacity(rows);
                for row in m.iter_rows() {
                    let (mut bi, mut bv) = (0, row[0]);
                    for (c, &v) in row.iter().enumerate().skip(1) {
                        if v > bv {
                            bi = c;
                            bv = v;
                        }
                    }
                    best.push(bv);
                    arg.push(bi);
                }
                (Matrix::new(rows, 1, best), arg)
            }
        };
        let rg = self.needs(&[x]);
        self.push(
            value.expect("nonempty"),
            Op::MaxReduce {
                input: x,
                axis,
                argmax,
            },
            rg,
        )
    }

    /// Concatenates along `axis`. `Rows` stacks vertically; `Cols` joins
    /// side by side.
    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat of zero inputs"))?;
        let (r0, c0) = self.shape(first);
        let value = match axis {
            Axis::Rows => {
                if let Some(v) = inputs.iter().find(|v| self.shape(**v).1 != c0) {
                    return Err(Error::shape(format!(
                        "concat rows: column count {} vs {c0}",
                        self.shape(*v).1
                    )));
                }
                let mut data = Vec::new();
                let mut rows = 0;
                for v in inputs {
                    let m = &self.nodes[v.0].value;
                    rows += m.rows();
                    data.extend_from_slice(m.as_slice());
                }
                Matrix::new(rows, c0, data)?
            }
            Axis::Cols => {
                if let Some(v) = inputs.iter().find(|v| self.shape(**v).0 != r0) {
                    return Err(Error::shape(format!(
                        "concat cols: row count {} vs {r0}",
                        self.shape(*v).0
                    )));
                }
                let cols: usize = inputs.iter().map(|v| self.shape(*v).1).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for v in inputs {
                        data.extend_from_slice(self.nodes[v.0].value.row(r));
                    }
                }
                Matrix::new(r0, cols, data)?
            }
        };
        let rg = self.needs(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let m = &self.nodes[x.0].value;
        let mut out = m.clone();
        let (rows, cols) = m.shape();
        match axis {
            Axis::Cols => {
                for r in 0..rows {
                    softmax_in_place(out.row_mut(r));
                }
            }
            Axis::Rows => {
                let mut buf = vec![0.0; rows];
                for c in 0..cols {
                    for (r, b) in buf.iter_mut().enumerate() {
                        *b = m.get(r, c);
                    }
                    softmax_in_place(&mut buf);
                    for (r, b) in buf.iter().enumerate() {
                        out.set(r, c, *b);
                    }
                }
            }
        }
        let rg = self.needs(&[x]);
        self.push(out, Op::Softmax { input: x, axis }, rg)
    }

    /// Gathers the listed rows in order. Duplicates are allowed.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let m = &self.nodes[x.0].value;
        if rows.is_empty() {
            return Err(Error::shape("select_rows with no rows"));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= m.rows()) {
            return Err(Error::shape(format!(
                "row {r} out of range for {} rows",
                m.rows()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * m.cols());
        for &r in rows {
            data.extend_from_slice(m.row(r));
        }
        let value = Matrix::new(rows.len(), m.cols(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(
            value,
            Op::SelectRows {
                input: x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `output`. Gradients from earlier calls are
    /// cleared first.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.shape(output) != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
        self.nodes[output.0].grad[0] = 1.0;

        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            // Split so the current node can be read while parents are written.
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            propagate(node, before);
        }
        Ok(())
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

fn accumulate(parent: &mut Node, f: impl FnOnce(&mut [f64])) {
    if parent.requires_grad {
        f(&mut parent.grad);
    }
}

fn propagate(node: &Node, before: &mut [Node]) {
    let g = &node.grad;
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(&mut before[a.0], |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g)
            });
            accumulate(&mut before[b.0], |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g)
            });
        }
        Op::Sub(a, b) => {
            accumulate(&mut before[a.0], |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g)
            });
            accumulate(&mut before[b.0], |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d -= g)
            });
        }
        Op::Mul(a, b) => {
            let va = before[a.0].value.as_slice().to_vec();
            let vb = before[b.0].value.as_slice().to_vec();
            accumulate(&mut before[a.0], |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(&vb) {
                    *d += g * y;
                }
            });
            accumulate(&mut before[b.0], |d| {
                for ((d, g), x) in d.iter_mut().zip(g).zip(&va) {
                    *d += g * x;
                }
            });
        }
        Op::Scale(x, s) => {
            accumulate(&mut before[x.0], |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s)
            });
        }
        Op::MatMul(a, b) => {
            let (m, n) = y.shape();
            if before[a.0].requires_grad {
                let vb = before[b.0].value.clone();
                gemm_nt(g, m, n, &vb, &mut before[a.0].grad);
            }
            if before[b.0].requires_grad {
                let va = before[a.0].value.clone();
                gemm_tn(&va, g, n, &mut before[b.0].grad);
            }
        }
        Op::Relu(x) => {
            let p = &mut before[x.0];
            if !p.requires_grad {
                return;
            }
            let (vals, grad) = (&p.value, &mut p.grad);
            for ((d, g), v) in grad.iter_mut().zip(g).zip(vals.as_slice()) {
                if *v > 0.0 {
                    *d += g;
                }
            }
        }
        Op::Log(x) => {
            let p = &mut before[x.0];
            if !p.requires_grad {
                return;
            }
            let (vals, grad) = (&p.value, &mut p.grad);
            for ((d, g), v) in grad.iter_mut().zip(g).zip(vals.as_slice()) {
                if *v > PROB_FLOOR {
                    *d += g / v;
                }
            }
        }
        Op::Exp(x) => {
            accumulate(&mut before[x.0], |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y.as_slice()) {
                    *d += g * y;
                }
            });
        }
        Op::Sum(x) => {
            let g0 = g[0];
            accumulate(&mut before[x.0], |d| d.iter_mut().for_each(|d| *d += g0));
        }
        Op::MaxReduce {
            input,
            axis,
            argmax,
        } => {
            let p = &mut before[input.0];
            if !p.requires_grad {
                return;
            }
            let cols = p.value.cols();
            match axis {
                Axis::Rows => {
                    for (c, &r) in argmax.iter().enumerate() {
                        p.grad[r * cols + c] += g[c];
                    }
                }
                Axis::Cols => {
                    for (r, &c) in argmax.iter().enumerate() {
                        p.grad[r * cols + c] += g[r];
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let total_cols = y.cols();
            let mut offset = 0;
            for v in inputs {
                let p = &mut before[v.0];
                let (pr, pc) = p.value.shape();
                if p.requires_grad {
                    match axis {
                        Axis::Rows => {
                            let start = offset * total_cols;
                            for (d, g) in p.grad.iter_mut().zip(&g[start..start + pr * pc]) {
                                *d += g;
                            }
                        }
                        Axis::Cols => {
                            for r in 0..pr {
                                let src = &g[r * total_cols + offset..r * total_cols + offset + pc];
                                for (d, g) in p.grad[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                    *d += g;
                                }
                            }
                        }
                    }
                }
                offset += match axis {
                    Axis::Rows => pr,
                    Axis::Cols => pc,
                };
            }
        }
        Op::Softmax { input, axis } => {
            let p = &mut before[input.0];
            if !p.requires_grad {
                return;
            }
            let (rows, cols) = y.shape();
            match axis {
                Axis::Cols => {
                    for r in 0..rows {
                        let yr = y.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            p.grad[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
                Axis::Rows => {
                    for c in 0..cols {
                        let dot: f64 = (0..rows).map(|r| y.get(r, c) * g[r * cols + c]).sum();
                        for r in 0..rows {
                            p.grad[r * cols + c] += y.get(r, c) * (g[r * cols + c] - dot);
                        }
                    }
                }
            }
        }
        Op::SelectRows { input, rows } => {
            let p = &mut before[input.0];
            if !p.requires_grad {
                return;
            }
            let cols = p.value.cols();
            for (i, &r) in rows.iter().enumerate() {
                for c in 0..cols {
                    p.grad[r * cols + c] += g[i * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
