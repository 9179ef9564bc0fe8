//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every training step. Nodes are appended in
//! evaluation order, so the node vector is already a topological order and
//! [`Tape::backward`] simply walks it in reverse. Leaves are either named
//! parameters, anonymous variables (gradients wanted, no name), or constants
//! (no gradient tracked).

use std::collections::BTreeMap;

use super::tensor::{self, Tensor};
use crate::error::{MtmdError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Softmax(Var, usize),
    MaskedSoftmaxRows(Var),
    CosineRows(Var, Var, f64),
    L2NormRows(Var, f64),
    SliceCols(Var, usize, usize),
    Sum(Var),
    Mse(Var, Tensor),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient at any node; `None` when the node does not reach the root or
    /// is a constant.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Parameter gradients keyed by name. Parameters the loss does not depend
    /// on get an all-zero gradient.
    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(MtmdError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Named learnable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(name.into());
        v
    }

    /// Unnamed leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a fixed tensor (masks, fixed weights).
    pub fn mul_const(&mut self, a: Var, k: Tensor) -> Result<Var> {
        same_shape("mul_const", self.value(a), &k)?;
        let value = self.value(a).zip_map(&k, |x, y| x * y);
        let rg = self.rg(a);
        Ok(self.push(value, Op::MulConst(a, k), rg))
    }

    /// Adds a bias vector of length `n` to every row of an `[m×n]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let b = self.value(bias);
        if b.len() != n {
            return Err(MtmdError::shape("add_row", self.value(x).shape(), b.shape()));
        }
        let mut out = self.value(x).clone();
        for r in 0..m {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(tensor::sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = tensor::leaky_relu(self.value(a), slope);
        let rg = self.rg(a);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = tensor::softmax_over_axis(self.value(a), axis)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a, axis), rg))
    }

    /// Row softmax over the entries selected by `mask` (row-major, same size).
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let value = tensor::masked_softmax_rows(self.value(a), &mask)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MaskedSoftmaxRows(a), rg))
    }

    /// Pairwise row cosine similarities, `[n×l] × [m×l] → [n×m]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        let value = tensor::cosine_matrix(self.value(a), self.value(b), eps)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::CosineRows(a, b, eps), rg))
    }

    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let value = tensor::l2_normalize_rows(self.value(a), eps)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::L2NormRows(a, eps), rg))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start + len > n {
            return Err(MtmdError::shape("slice_cols", &[m, n], &[start, len]));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![m, len], out), Op::SliceCols(a, start, len), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Mean squared error between a prediction node and fixed targets.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(MtmdError::shape("mse", p.shape(), target.shape()));
        }
        let n = p.len().max(1) as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target.clone()), rg))
    }

    /// Propagates `d root / d node` to every node reachable from `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(MtmdError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::filled(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = grads[idx]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match params.get_mut(name) {
                    None => {
                        params.insert(name.clone(), g);
                    }
                    Some(acc) => {
                        let acc: &mut Tensor = acc;
                        acc.add_assign(&g);
                    }
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let bt = self.value(*b).transpose()?;
                    self.accumulate(grads, *a, tensor::matmul(g, &bt)?);
                }
                if self.rg(*b) {
                    let at = self.value(*a).transpose()?;
                    self.accumulate(grads, *b, tensor::matmul(&at, g)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::MulConst(a, k) => self.accumulate(grads, *a, g.zip_map(k, |x, y| x * y)),
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*bias) {
                    let (m, n) = g.dims2()?;
                    let mut col = vec![0.0; n];
                    for r in 0..m {
                        for (c, v) in col.iter_mut().zip(g.row(r)) {
                            *c += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::from_parts(shape, col));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::Sigmoid(a) => self.accumulate(grads, *a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip_map(y, |gv, t| gv * (1.0 - t * t))),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let gx = g.zip_map(x, |gv, xv| if xv >= 0.0 { gv } else { gv * slope });
                self.accumulate(grads, *a, gx);
            }
            Op::Softmax(a, axis) => {
                let gx = softmax_backward(y, g, *axis);
                self.accumulate(grads, *a, gx);
            }
            Op::MaskedSoftmaxRows(a) => {
                // Masked entries carry y = 0 and so receive no gradient.
                self.accumulate(grads, *a, softmax_backward(y, g, 1));
            }
            Op::CosineRows(a, b, eps) => {
                let (ga, gb) = cosine_backward(self.value(*a), self.value(*b), y, g, *eps)?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::L2NormRows(a, eps) => {
                let x = self.value(*a);
                let (rows, _) = x.dims2()?;
                let mut out = g.clone();
                for r in 0..rows {
                    let n = tensor::norm(x.row(r));
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let o = out.row_mut(r);
                    if n > *eps {
                        let proj = tensor::dot(yr, gr);
                        for k in 0..o.len() {
                            o[k] = (gr[k] - yr[k] * proj) / n;
                        }
                    } else {
                        for v in o.iter_mut() {
                            *v /= eps;
                        }
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::SliceCols(a, start, len) => {
                let shape = self.value(*a).shape().to_vec();
                let mut out = Tensor::zeros(&shape);
                for r in 0..shape[0] {
                    out.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, out);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::filled(&shape, g.item()));
            }
            Op::Mse(pred, target) => {
                let p = self.value(*pred);
                let n = p.len().max(1) as f64;
                let scale = 2.0 * g.item() / n;
                let gp = Tensor::from_parts(
                    p.shape().to_vec(),
                    p.data()
                        .iter()
                        .zip(target.data())
                        .map(|(a, b)| scale * (a - b))
                        .collect(),
                );
                self.accumulate(grads, *pred, gp);
            }
        }
        Ok(())
    }
}

/// `dx = y ⊙ (g − Σ_axis g⊙y)`.
fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (rows, cols) = match y.shape() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (1, y.len()),
    };
    let along_cols = y.rank() == 1 || axis == 1;
    let (outer, inner, so, si) = if along_cols {
        (rows, cols, cols, 1)
    } else {
        (cols, rows, 1, cols)
    };
    let yd = y.data();
    let gd = g.data();
    let mut out = vec![0.0; yd.len()];
    for o in 0..outer {
        let idx = |i: usize| o * so + i * si;
        let s: f64 = (0..inner).map(|i| gd[idx(i)] * yd[idx(i)]).sum();
        for i in 0..inner {
            out[idx(i)] = yd[idx(i)] * (gd[idx(i)] - s);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

fn cosine_backward(
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    g: &Tensor,
    eps: f64,
) -> Result<(Tensor, Tensor)> {
    let (n, l) = a.dims2()?;
    let (m, _) = b.dims2()?;
    let raw_a: Vec<f64> = (0..n).map(|i| tensor::norm(a.row(i))).collect();
    let raw_b: Vec<f64> = (0..m).map(|j| tensor::norm(b.row(j))).collect();
    let mut ga = Tensor::zeros(&[n, l]);
    let mut gb = Tensor::zeros(&[m, l]);
    for i in 0..n {
        let na = raw_a[i].max(eps);
        for j in 0..m {
            let gij = g.get2(i, j);
            if gij == 0.0 {
                continue;
            }
            let nb = raw_b[j].max(eps);
            let cij = c.get2(i, j);
            let inv = 1.0 / (na * nb);
            // Norm terms only vary when the guard is inactive.
            let ka = if raw_a[i] > eps { cij / (na * na) } else { 0.0 };
            let kb = if raw_b[j] > eps { cij / (nb * nb) } else { 0.0 };
            let ar = a.row(i);
            let br = b.row(j);
            {
                let gar = ga.row_mut(i);
                for k in 0..l {
                    gar[k] += gij * (br[k] * inv - ka * ar[k]);
                }
            }
            let gbr = gb.row_mut(j);
            for k in 0..l {
                gbr[k] += gij * (ar[k] * inv - kb * br[k]);
            }
        }
    }
    Ok((ga, gb))
}
