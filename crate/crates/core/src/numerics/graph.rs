//! Reverse-mode automatic differentiation on a recorded operation graph.
//!
//! Values are computed eagerly as nodes are recorded; `backprop` replays the
//! record in reverse. Forward evaluation is deterministic given identical
//! inputs, and gradients for leaves the loss does not reach are zero.

use super::matmul::{mm_nn_acc, mm_nt_acc, mm_tn_acc};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    /// 2-d matrix product.
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    /// Column-wise concatenation of two 2-d tensors with equal row counts.
    ConcatCols(NodeId, NodeId),
    /// Columns `[start, end)` of a 2-d tensor.
    SliceCols(NodeId, usize, usize),
    Sum(NodeId),
    Mean(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    /// Row-broadcast add: `a[r,c] + b[c]`.
    AddBias(NodeId, NodeId),
    /// Multiply every element of `a` by the single element of `s`.
    Scale(NodeId, NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input or parameter leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a.0].value.map(|x| x + c);
        self.push(Op::AddScalar(a), value)
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a.0].value.map(|x| x * c);
        self.push(Op::MulScalar(a, c), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Shape(format!(
                "matmul on {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut c = vec![0.0; m * n];
        mm_nn_acc(&mut c, ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], c)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        if ta.shape().len() != 2 {
            return Err(Error::Shape(format!("transpose on {:?}", ta.shape())));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ta.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        Ok(self.push(Op::Transpose(a), value))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.nodes[a.0].value.clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), value))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::Shape(format!(
                "concat_cols on {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (r, ca, cb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::new(vec![r, ca + cb], data)?;
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        if ta.shape().len() != 2 || start >= end || end > ta.shape()[1] {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {end}) on {:?}",
                ta.shape()
            )));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&ta.data()[i * c + start..i * c + end]);
        }
        let value = Tensor::new(vec![r, end - start], data)?;
        Ok(self.push(Op::SliceCols(a, start, end), value))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let value = self.nodes[a.0].value.map(f);
        self.push(op, value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / x, Op::Recip(a))
    }

    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.numel() != ta.shape()[1] {
            return Err(Error::Shape(format!(
                "add_bias on {:?} with bias {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let mut data = ta.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += tb.data()[j];
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(Op::AddBias(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let ts = &self.nodes[s.0].value;
        if !ts.is_scalar() {
            return Err(Error::Shape(format!(
                "scale factor must be scalar, got {:?}",
                ts.shape()
            )));
        }
        let f = ts.item();
        let value = self.nodes[a.0].value.map(|x| x * f);
        Ok(self.push(Op::Scale(a, s), value))
    }

    // Composites used throughout the networks.

    /// Mean of squared entries; the workhorse loss.
    pub fn mean_sq(&mut self, a: NodeId) -> Result<NodeId> {
        let sq = self.mul(a, a)?;
        Ok(self.mean(sq))
    }

    /// `x * (sum(x∘x) + eps)^(-1/2)`: unit-norm rescaling of the whole tensor.
    pub fn normalize(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let sq = self.mul(a, a)?;
        let s = self.sum(sq);
        let s = self.add_scalar(s, eps);
        let root = self.sqrt(s);
        let inv = self.recip(root);
        self.scale(a, inv)
    }

    /// Gradient of the scalar at `loss` w.r.t. every node.
    ///
    /// Leaves the loss does not reach get zero gradients on lookup.
    pub fn backprop(&self, loss: NodeId) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(Error::Shape(format!(
                "loss must be scalar, got {:?}",
                lt.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g, &mut adj);
            adj[i] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads: adj, shapes })
    }

    /// Scatter the adjoint `g` of node `i` into the adjoints of its inputs.
    fn accumulate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut bump = |id: NodeId, delta: Tensor| {
            match &mut adj[id.0] {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                        *a += d;
                    }
                }
                slot => *slot = Some(delta),
            };
        };
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                bump(a, g.clone());
                bump(b, g.clone());
            }
            Op::Sub(a, b) => {
                bump(a, g.clone());
                bump(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                let db: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                bump(a, Tensor::new(ta.shape().to_vec(), da).unwrap());
                bump(b, Tensor::new(tb.shape().to_vec(), db).unwrap());
            }
            Op::AddScalar(a) => bump(a, g.clone()),
            Op::MulScalar(a, c) => bump(a, g.map(|x| x * c)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = G B^T, dB = A^T G
                let mut da = vec![0.0; m * k];
                mm_nt_acc(&mut da, g.data(), tb.data(), m, n, k);
                let mut db = vec![0.0; k * n];
                mm_tn_acc(&mut db, ta.data(), g.data(), k, m, n);
                bump(a, Tensor::new(vec![m, k], da).unwrap());
                bump(b, Tensor::new(vec![k, n], db).unwrap());
            }
            Op::Transpose(a) => {
                let (r, c) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                // g has shape [c, r]; transpose it back.
                let mut da = vec![0.0; r * c];
                for i2 in 0..c {
                    for j2 in 0..r {
                        da[j2 * c + i2] = g.data()[i2 * r + j2];
                    }
                }
                bump(a, Tensor::new(vec![r, c], da).unwrap());
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                bump(
                    a,
                    Tensor::new(shape, g.data().to_vec()).unwrap(),
                );
            }
            Op::ConcatCols(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (r, ca, cb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut da = vec![0.0; r * ca];
                let mut db = vec![0.0; r * cb];
                for i2 in 0..r {
                    let row = &g.data()[i2 * (ca + cb)..(i2 + 1) * (ca + cb)];
                    da[i2 * ca..(i2 + 1) * ca].copy_from_slice(&row[..ca]);
                    db[i2 * cb..(i2 + 1) * cb].copy_from_slice(&row[ca..]);
                }
                bump(a, Tensor::new(vec![r, ca], da).unwrap());
                bump(b, Tensor::new(vec![r, cb], db).unwrap());
            }
            Op::SliceCols(a, start, end) => {
                let ta = &self.nodes[a.0].value;
                let (r, c) = (ta.shape()[0], ta.shape()[1]);
                let w = end - start;
                let mut da = vec![0.0; r * c];
                for i2 in 0..r {
                    da[i2 * c + start..i2 * c + end]
                        .copy_from_slice(&g.data()[i2 * w..(i2 + 1) * w]);
                }
                bump(a, Tensor::new(vec![r, c], da).unwrap());
            }
            Op::Sum(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                bump(a, Tensor::filled(&shape, g.item()));
            }
            Op::Mean(a) => {
                let t = &self.nodes[a.0].value;
                bump(
                    a,
                    Tensor::filled(t.shape(), g.item() / t.numel() as f64),
                );
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &yv)| gv * (1.0 - yv * yv))
                    .collect();
                bump(a, Tensor::new(y.shape().to_vec(), da).unwrap());
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                bump(a, Tensor::new(x.shape().to_vec(), da).unwrap());
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &yv)| gv * yv * (1.0 - yv))
                    .collect();
                bump(a, Tensor::new(y.shape().to_vec(), da).unwrap());
            }
            Op::Sin(a) => {
                let x = &self.nodes[a.0].value;
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| gv * xv.cos())
                    .collect();
                bump(a, Tensor::new(x.shape().to_vec(), da).unwrap());
            }
            Op::Cos(a) => {
                let x = &self.nodes[a.0].value;
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| -gv * xv.sin())
                    .collect();
                bump(a, Tensor::new(x.shape().to_vec(), da).unwrap());
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &yv)| gv / (2.0 * yv))
                    .collect();
                bump(a, Tensor::new(y.shape().to_vec(), da).unwrap());
            }
            Op::Recip(a) => {
                let y = &node.value;
                let da: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &yv)| -gv * yv * yv)
                    .collect();
                bump(a, Tensor::new(y.shape().to_vec(), da).unwrap());
            }
            Op::AddBias(a, b) => {
                let ta = &self.nodes[a.0].value;
                let (r, c) = (ta.shape()[0], ta.shape()[1]);
                bump(a, g.clone());
                let mut db = vec![0.0; c];
                for i2 in 0..r {
                    for j2 in 0..c {
                        db[j2] += g.data()[i2 * c + j2];
                    }
                }
                let bshape = self.nodes[b.0].value.shape().to_vec();
                bump(b, Tensor::new(bshape, db).unwrap());
            }
            Op::Scale(a, s) => {
                let ta = &self.nodes[a.0].value;
                let f = self.nodes[s.0].value.item();
                bump(a, g.map(|x| x * f));
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(&gv, &av)| gv * av)
                    .sum();
                bump(s, Tensor::scalar(ds));
            }
        }
    }
}

/// Per-node gradients produced by [`Graph::backprop`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`; zeros when the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}
