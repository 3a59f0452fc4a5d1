//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is an append-only tape of [`DiffNode`]s. Forward values are
//! computed eagerly as ops are built; [`Graph::backward`] walks the tape in
//! reverse, accumulating gradients additively so fan-out is handled for
//! free. Parents always precede children on the tape, which makes the
//! reverse walk a valid topological order.
//!
//! Every public op validates shapes up front and checks that its result is
//! finite, so NaN/Inf surfaces as an error at the op that produced it
//! instead of poisoning a later loss value.

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Operation kinds understood by the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// Leaf holding an externally supplied value.
    Input,
    MatMul,
    Add,
    ElemMul,
    /// Multiply every entry by a fixed scalar.
    ScalarMul(f64),
    Exp,
    Log,
    Negate,
    /// Sum of all entries, yielding a 1x1 matrix.
    Sum,
    /// Mean of all entries, yielding a 1x1 matrix.
    Mean,
    RowSoftmax,
    L2NormalizeRows,
    Tanh,
    Relu,
    Transpose,
    /// Gather the listed rows, in order. Duplicates allowed.
    RowSelect(Vec<usize>),
}

/// Node in the differentiable computation graph: a value matrix, its
/// gradient accumulator, the op that produced it, and its parents.
#[derive(Debug, Clone)]
pub struct DiffNode {
    pub value: Matrix,
    pub grad: Matrix,
    pub op: OpKind,
    pub parents: Vec<NodeId>,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<DiffNode>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf node holding `value`.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(DiffNode {
            value,
            grad,
            op: OpKind::Input,
            parents: Vec::new(),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].grad
    }

    /// Scalar convenience accessor for 1x1 nodes.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: OpKind, parents: Vec<NodeId>) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name(&op) });
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.nodes.push(DiffNode {
            value,
            grad,
            op,
            parents,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Generic op constructor. Convenience wrappers below forward here.
    pub fn build_op(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::ElemMul => 2,
            OpKind::Input => {
                return Err(Error::BadArity("Input nodes are created via Graph::input".into()))
            }
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::BadArity(format!(
                "{} expects {arity} inputs, got {}",
                op_name(&kind),
                inputs.len()
            )));
        }
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(Error::IndexOutOfRange {
                    index: id.0,
                    len: self.nodes.len(),
                });
            }
        }
        let value = self.forward(&kind, inputs)?;
        self.push(value, kind, inputs.to_vec())
    }

    fn forward(&self, kind: &OpKind, inputs: &[NodeId]) -> Result<Matrix> {
        let v = |i: usize| &self.nodes[inputs[i].0].value;
        match kind {
            OpKind::Input => unreachable!("handled in build_op"),
            OpKind::MatMul => v(0).matmul(v(1)),
            OpKind::Add => {
                let (a, b) = (v(0), v(1));
                if a.shape() != b.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "add",
                        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
                    });
                }
                let mut out = a.clone();
                out.add_assign(b)?;
                Ok(out)
            }
            OpKind::ElemMul => {
                let (a, b) = (v(0), v(1));
                if a.shape() != b.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "elementwise-multiply",
                        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
                    });
                }
                let mut out = a.clone();
                for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
                    *x *= y;
                }
                Ok(out)
            }
            OpKind::ScalarMul(c) => Ok(v(0).map(|x| c * x)),
            OpKind::Exp => Ok(v(0).map(f64::exp)),
            OpKind::Log => {
                let a = v(0);
                if let Some(bad) = a.data().iter().find(|&&x| x <= 0.0) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("log of non-positive value {bad}"),
                    });
                }
                Ok(a.map(f64::ln))
            }
            OpKind::Negate => Ok(v(0).map(|x| -x)),
            OpKind::Sum => {
                let s: f64 = v(0).data().iter().sum();
                Matrix::from_vec(1, 1, vec![s])
            }
            OpKind::Mean => {
                let a = v(0);
                let s: f64 = a.data().iter().sum();
                Matrix::from_vec(1, 1, vec![s / a.len() as f64])
            }
            OpKind::RowSoftmax => {
                let a = v(0);
                let mut out = a.clone();
                for r in 0..a.rows() {
                    let row = &mut out.data_mut()[r * a.cols()..(r + 1) * a.cols()];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        sum += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= sum;
                    }
                }
                Ok(out)
            }
            OpKind::L2NormalizeRows => {
                let a = v(0);
                let mut out = a.clone();
                for r in 0..a.rows() {
                    let row = &mut out.data_mut()[r * a.cols()..(r + 1) * a.cols()];
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm < 1e-30 {
                        return Err(Error::ZeroRow { row: r });
                    }
                    for x in row.iter_mut() {
                        *x /= norm;
                    }
                }
                Ok(out)
            }
            OpKind::Tanh => Ok(v(0).map(f64::tanh)),
            OpKind::Relu => Ok(v(0).map(|x| if x > 0.0 { x } else { 0.0 })),
            OpKind::Transpose => Ok(v(0).transpose()),
            OpKind::RowSelect(indices) => {
                let a = v(0);
                let mut out = Matrix::zeros(indices.len(), a.cols());
                for (k, &idx) in indices.iter().enumerate() {
                    if idx >= a.rows() {
                        return Err(Error::IndexOutOfRange {
                            index: idx,
                            len: a.rows(),
                        });
                    }
                    for c in 0..a.cols() {
                        out.set(k, c, a.get(idx, c));
                    }
                }
                Ok(out)
            }
        }
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    pub fn elem_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::ElemMul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.build_op(OpKind::ScalarMul(c), &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::Log, &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::Negate, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::Mean, &[a])
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::RowSoftmax, &[a])
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::L2NormalizeRows, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::Tanh, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::Relu, &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.build_op(OpKind::Transpose, &[a])
    }

    pub fn row_select(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        self.build_op(OpKind::RowSelect(indices.to_vec()), &[a])
    }

    /// Propagate gradients from a scalar root to every reachable node.
    ///
    /// Gradients accumulate additively across fan-out; any previous
    /// gradients on the tape are cleared first.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let (r, c) = self.nodes[root.0].value.shape();
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarRoot { rows: r, cols: c });
        }
        for node in &mut self.nodes {
            node.grad = Matrix::zeros(node.value.rows(), node.value.cols());
        }
        self.nodes[root.0].grad.set(0, 0, 1.0);

        // Parents always precede children, so a reverse index walk visits
        // every node after all of its consumers.
        for i in (0..=root.0).rev() {
            let node = self.nodes[i].clone();
            if node.grad.data().iter().all(|&g| g == 0.0) {
                continue;
            }
            self.propagate(&node)?;
        }
        Ok(())
    }

    fn propagate(&mut self, node: &DiffNode) -> Result<()> {
        let g = &node.grad;
        match &node.op {
            OpKind::Input => {}
            OpKind::MatMul => {
                let (a, b) = (node.parents[0], node.parents[1]);
                let da = g.matmul(&self.nodes[b.0].value.transpose())?;
                let db = self.nodes[a.0].value.transpose().matmul(g)?;
                self.nodes[a.0].grad.add_assign(&da)?;
                self.nodes[b.0].grad.add_assign(&db)?;
            }
            OpKind::Add => {
                self.nodes[node.parents[0].0].grad.add_assign(g)?;
                self.nodes[node.parents[1].0].grad.add_assign(g)?;
            }
            OpKind::ElemMul => {
                let (a, b) = (node.parents[0], node.parents[1]);
                let bv = self.nodes[b.0].value.clone();
                let av = self.nodes[a.0].value.clone();
                let mut da = g.clone();
                for (x, y) in da.data_mut().iter_mut().zip(bv.data()) {
                    *x *= y;
                }
                let mut db = g.clone();
                for (x, y) in db.data_mut().iter_mut().zip(av.data()) {
                    *x *= y;
                }
                self.nodes[a.0].grad.add_assign(&da)?;
                self.nodes[b.0].grad.add_assign(&db)?;
            }
            OpKind::ScalarMul(c) => {
                let da = g.map(|x| c * x);
                self.nodes[node.parents[0].0].grad.add_assign(&da)?;
            }
            OpKind::Exp => {
                // value already holds exp(a)
                let mut da = g.clone();
                for (x, y) in da.data_mut().iter_mut().zip(node.value.data()) {
                    *x *= y;
                }
                self.nodes[node.parents[0].0].grad.add_assign(&da)?;
            }
            OpKind::Log => {
                let av = self.nodes[node.parents[0].0].value.clone();
                let mut da = g.clone();
                for (x, y) in da.data_mut().iter_mut().zip(av.data()) {
                    *x /= y;
                }
                self.nodes[node.parents[0].0].grad.add_assign(&da)?;
            }
            OpKind::Negate => {
                let da = g.map(|x| -x);
                self.nodes[node.parents[0].0].grad.add_assign(&da)?;
            }
            OpKind::Sum => {
                let s = g.get(0, 0);
                let p = node.parents[0];
                for x in self.nodes[p.0].grad.data_mut() {
                    *x += s;
                }
            }
            OpKind::Mean => {
                let p = node.parents[0];
                let n = self.nodes[p.0].value.len() as f64;
                let s = g.get(0, 0) / n;
                for x in self.nodes[p.0].grad.data_mut() {
                    *x += s;
                }
            }
            OpKind::RowSoftmax => {
                // dx = y ∘ (g - <g, y>_row)
                let p = node.parents[0];
                let y = &node.value;
                let cols = y.cols();
                let mut da = Matrix::zeros(y.rows(), cols);
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        da.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                self.nodes[p.0].grad.add_assign(&da)?;
            }
            OpKind::L2NormalizeRows => {
                // dx = (g - y <g, y>_row) / ||x||_row
                let p = node.parents[0];
                let x = self.nodes[p.0].value.clone();
                let y = &node.value;
                let cols = y.cols();
                let mut da = Matrix::zeros(y.rows(), cols);
                for r in 0..y.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        da.set(r, c, (gr[c] - yr[c] * dot) / norm);
                    }
                }
                self.nodes[p.0].grad.add_assign(&da)?;
            }
            OpKind::Tanh => {
                let mut da = g.clone();
                for (x, y) in da.data_mut().iter_mut().zip(node.value.data()) {
                    *x *= 1.0 - y * y;
                }
                self.nodes[node.parents[0].0].grad.add_assign(&da)?;
            }
            OpKind::Relu => {
                let p = node.parents[0];
                let xv = self.nodes[p.0].value.clone();
                let mut da = g.clone();
                for (x, v) in da.data_mut().iter_mut().zip(xv.data()) {
                    if *v <= 0.0 {
                        *x = 0.0;
                    }
                }
                self.nodes[p.0].grad.add_assign(&da)?;
            }
            OpKind::Transpose => {
                let da = g.transpose();
                self.nodes[node.parents[0].0].grad.add_assign(&da)?;
            }
            OpKind::RowSelect(indices) => {
                let p = node.parents[0];
                for (k, &idx) in indices.iter().enumerate() {
                    for c in 0..g.cols() {
                        let cur = self.nodes[p.0].grad.get(idx, c);
                        self.nodes[p.0].grad.set(idx, c, cur + g.get(k, c));
                    }
                }
            }
        }
        Ok(())
    }
}

fn op_name(kind: &OpKind) -> &'static str {
    match kind {
        OpKind::Input => "input",
        OpKind::MatMul => "matmul",
        OpKind::Add => "add",
        OpKind::ElemMul => "elementwise-multiply",
        OpKind::ScalarMul(_) => "scalar-multiply",
        OpKind::Exp => "exp",
        OpKind::Log => "log",
        OpKind::Negate => "negate",
        OpKind::Sum => "sum",
        OpKind::Mean => "mean",
        OpKind::RowSoftmax => "row-softmax",
        OpKind::L2NormalizeRows => "l2-normalize-rows",
        OpKind::Tanh => "tanh",
        OpKind::Relu => "relu",
        OpKind::Transpose => "transpose",
        OpKind::RowSelect(_) => "row-select",
    }
}
