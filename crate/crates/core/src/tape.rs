//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each recorded node keeps
//! its forward value and the ids of its inputs; inputs always precede the node
//! that consumes them, so a single reverse sweep in id order is a valid
//! topological traversal for [`backward`].
//!
//! Parameters enter the tape as leaves tagged with a [`ParamId`]; constants
//! enter as untagged leaves and never receive gradients. Nodes that depend on
//! no parameter are skipped entirely during the reverse sweep.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cross_entropy_rows, Tensor};

/// Identifies one parameter tensor: `(layer index, slot within layer)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId {
    pub layer: usize,
    pub slot: usize,
}

impl ParamId {
    pub const fn new(layer: usize, slot: usize) -> Self {
        Self { layer, slot }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Gradients keyed by parameter; each has its parameter's shape.
pub type GradientMap = BTreeMap<ParamId, Tensor>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    GatherRows(usize, Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    CrossEntropy { logits: usize, targets: Vec<usize> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::GatherRows(a, _)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _) => vec![*a],
            Op::ConcatRows(parts) => parts.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    param: Option<ParamId>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Ids of the inputs of node `v`.
    pub fn inputs_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            param: Some(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            param: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a.0, b.0), value))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_bias(self.value(bias))?;
        Ok(self.push(Op::AddBias(a.0, bias.0), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a.0, b.0), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a.0, b.0), value))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a.0), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a.0), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a.0), value)
    }

    /// Selects rows of a matrix by index (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if src.shape().len() != 2 {
            return Err(Error::Shape {
                op: "gather_rows",
                left: src.shape().to_vec(),
                right: vec![rows.len()],
            });
        }
        let (n, d) = (src.rows(), src.cols());
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: r,
                    bound: n,
                });
            }
            data.extend_from_slice(&src.data()[r * d..(r + 1) * d]);
        }
        let value = Tensor::from_parts(vec![rows.len(), d], data);
        Ok(self.push(Op::GatherRows(a.0, rows.to_vec()), value))
    }

    /// Contiguous rows `start .. start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        if src.shape().len() != 2 || len == 0 || start + len > src.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: src.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let d = src.cols();
        let value = Tensor::from_parts(vec![len, d], src.data()[start * d..(start + len) * d].to_vec());
        Ok(self.push(Op::SliceRows(a.0, start), value))
    }

    /// Contiguous columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        if src.shape().len() != 2 || len == 0 || start + len > src.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: src.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let d = src.cols();
        let mut data = Vec::with_capacity(src.rows() * len);
        for row in src.data().chunks_exact(d) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::from_parts(vec![src.rows(), len], data);
        Ok(self.push(Op::SliceCols(a.0, start), value))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let d = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.cols() != d {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.value(*first).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_parts(vec![rows, d], data);
        Ok(self.push(Op::ConcatRows(parts.iter().map(|v| v.0).collect()), value))
    }

    /// Mean softmax cross-entropy of `logits [batch×classes]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let per_row = cross_entropy_rows(self.value(logits), targets)?;
        let mean = per_row.iter().sum::<f64>() / per_row.len() as f64;
        Ok(self.push(
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
            },
            Tensor::scalar(mean),
        ))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) -> Result<()> {
    match slot {
        Some(g) => g.add_assign(&delta),
        None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

/// Gradients of the scalar node `loss` with respect to every parameter leaf
/// on the tape. Parameters the loss does not depend on get zero tensors.
pub fn backward(tape: &Tape, loss: Var) -> Result<GradientMap> {
    let root = &tape.nodes[loss.0];
    if !root.value.is_scalar() {
        return Err(Error::contract(format!(
            "backward needs a scalar loss, node {} has shape {:?}",
            loss.0,
            root.value.shape()
        )));
    }
    let mut grads: Vec<Option<Tensor>> = (0..tape.nodes.len()).map(|_| None).collect();
    grads[loss.0] = Some(Tensor::from_parts(root.value.shape().to_vec(), vec![1.0]));

    for id in (0..=loss.0).rev() {
        let node = &tape.nodes[id];
        if !node.requires_grad || matches!(node.op, Op::Leaf) {
            continue;
        }
        let Some(upstream) = grads[id].take() else {
            continue;
        };
        let needs = |i: usize| tape.nodes[i].requires_grad;
        let val = |i: usize| &tape.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[*a], upstream.matmul_nt(val(*b))?)?;
                }
                if needs(*b) {
                    accumulate(&mut grads[*b], val(*a).matmul_tn(&upstream)?)?;
                }
            }
            Op::AddBias(a, bias) => {
                if needs(*bias) {
                    let g = upstream.sum_rows()?.reshape(val(*bias).shape())?;
                    accumulate(&mut grads[*bias], g)?;
                }
                if needs(*a) {
                    accumulate(&mut grads[*a], upstream)?;
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[*a], upstream.clone())?;
                }
                if needs(*b) {
                    accumulate(&mut grads[*b], upstream)?;
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[*a], upstream.mul(val(*b))?)?;
                }
                if needs(*b) {
                    accumulate(&mut grads[*b], upstream.mul(val(*a))?)?;
                }
            }
            Op::Tanh(a) => {
                let g = upstream.zip_with(&node.value, "tanh_backward", |g, y| g * (1.0 - y * y))?;
                accumulate(&mut grads[*a], g)?;
            }
            Op::Sigmoid(a) => {
                let g = upstream.zip_with(&node.value, "sigmoid_backward", |g, y| g * y * (1.0 - y))?;
                accumulate(&mut grads[*a], g)?;
            }
            Op::Relu(a) => {
                let g = upstream.zip_with(val(*a), "relu_backward", |g, x| if x > 0.0 { g } else { 0.0 })?;
                accumulate(&mut grads[*a], g)?;
            }
            Op::GatherRows(a, rows) => {
                let src = val(*a);
                let d = src.cols();
                let mut g = Tensor::zeros(src.shape());
                let gd = g.data_mut();
                for (k, &r) in rows.iter().enumerate() {
                    let up = &upstream.data()[k * d..(k + 1) * d];
                    for (o, u) in gd[r * d..(r + 1) * d].iter_mut().zip(up) {
                        *o += u;
                    }
                }
                accumulate(&mut grads[*a], g)?;
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let d = src.cols();
                let mut g = Tensor::zeros(src.shape());
                g.data_mut()[start * d..start * d + upstream.len()].copy_from_slice(upstream.data());
                accumulate(&mut grads[*a], g)?;
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let (d, len) = (src.cols(), upstream.cols());
                let mut g = Tensor::zeros(src.shape());
                for (dst, up) in g.data_mut().chunks_exact_mut(d).zip(upstream.data().chunks_exact(len)) {
                    dst[*start..start + len].copy_from_slice(up);
                }
                accumulate(&mut grads[*a], g)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if needs(p) {
                        let g = Tensor::from_parts(
                            val(p).shape().to_vec(),
                            upstream.data()[offset..offset + n].to_vec(),
                        );
                        accumulate(&mut grads[p], g)?;
                    }
                    offset += n;
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let scale = upstream.item()? / targets.len() as f64;
                let mut g = val(*logits).softmax_rows()?;
                let c = g.cols();
                for (row, &t) in g.data_mut().chunks_exact_mut(c).zip(targets) {
                    row[t] -= 1.0;
                    for x in row.iter_mut() {
                        *x *= scale;
                    }
                }
                accumulate(&mut grads[*logits], g)?;
            }
        }
    }

    let mut out = GradientMap::new();
    for (id, node) in tape.nodes.iter().enumerate() {
        if let Some(pid) = node.param {
            let g = grads[id].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            match out.get_mut(&pid) {
                Some(existing) => existing.add_assign(&g)?,
                None => {
                    out.insert(pid, g);
                }
            }
        }
    }
    Ok(out)
}

/// Compares tape gradients against central finite differences.
///
/// `f` receives a fresh tape plus one parameter leaf per entry of `params`
/// (registered as `ParamId::new(0, i)`) and must return the scalar loss.
/// The result is the worst relative error over all coordinates, with the
/// denominator floored at `1e-8`.
pub fn grad_check<F>(params: &[Tensor], epsilon: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::contract(format!("grad_check epsilon must be positive, got {epsilon}")));
    }
    let mut eval = |values: &[Tensor], want_grads: bool| -> Result<(f64, Option<GradientMap>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(ParamId::new(0, i), t.clone()))
            .collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss).item()?;
        let grads = if want_grads { Some(backward(&tape, loss)?) } else { None };
        Ok((value, grads))
    };

    let (_, grads) = eval(params, true)?;
    let grads = grads.expect("requested");
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..params.len() {
        let analytic = &grads[&ParamId::new(0, i)];
        for j in 0..params[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + epsilon;
            let (plus, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig - epsilon;
            let (minus, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
