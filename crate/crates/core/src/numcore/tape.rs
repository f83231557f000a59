//! Reverse-mode tape over dense vectors.
//!
//! Nodes hold vector values (scalars are length-1 vectors). Operations are
//! appended in evaluation order, so a single reverse sweep over the node list
//! propagates adjoints. Leaves either reference a [`ParamId`] or are
//! constants; [`Tape::backward`] accumulates adjoints of parameter leaves into
//! the [`ParamStore`].

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Added under the square root when differentiating `‖z‖₂`, so the gradient at
/// `z = 0` is the zero subgradient instead of NaN.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Product of two scalar nodes.
    ScalarMul(NodeId, NodeId),
    Sum(Vec<NodeId>),
    Norm(NodeId),
    SqNorm(NodeId),
    AbsSum(NodeId),
    Hinge(NodeId, f64),
    Softplus(NodeId),
    Exp(NodeId),
    Tanh(NodeId),
    /// `W x + b` with `W` stored row-major, `rows = b.len()`.
    Affine {
        w: NodeId,
        x: NodeId,
        b: NodeId,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default, Clone)]
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

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, n: NodeId) -> &[f64] {
        &self.nodes[n.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar_value(&self, n: NodeId) -> f64 {
        let v = self.value(n);
        assert_eq!(v.len(), 1, "node {} is not a scalar", n.0);
        v[0]
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).to_vec(), Op::Param(id))
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.push(vec![value], Op::Constant)
    }

    fn same_len(&self, a: NodeId, b: NodeId) {
        assert_eq!(self.value(a).len(), self.value(b).len(), "shape mismatch between nodes {} and {}", a.0, b.0);
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_len(a, b);
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_len(a, b);
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_len(a, b);
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).iter().map(|x| c * x).collect();
        self.push(v, Op::Scale(a, c))
    }

    pub fn scalar_mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.scalar_value(a) * self.scalar_value(b);
        self.push(vec![v], Op::ScalarMul(a, b))
    }

    /// Sum of scalar nodes. An empty list sums to zero.
    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        let mut acc = 0.0;
        for &t in terms {
            acc += self.scalar_value(t);
        }
        self.push(vec![acc], Op::Sum(terms.to_vec()))
    }

    pub fn mean(&mut self, terms: &[NodeId]) -> NodeId {
        assert!(!terms.is_empty(), "mean of no terms");
        let s = self.sum(terms);
        self.scale(s, 1.0 / terms.len() as f64)
    }

    pub fn norm(&mut self, a: NodeId) -> NodeId {
        let sq: f64 = self.value(a).iter().map(|x| x * x).sum();
        self.push(vec![sq.sqrt()], Op::Norm(a))
    }

    pub fn sq_norm(&mut self, a: NodeId) -> NodeId {
        let sq: f64 = self.value(a).iter().map(|x| x * x).sum();
        self.push(vec![sq], Op::SqNorm(a))
    }

    pub fn abs_sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).iter().map(|x| x.abs()).sum();
        self.push(vec![s], Op::AbsSum(a))
    }

    /// `max{0, x + margin}` on a scalar node.
    pub fn hinge(&mut self, x: NodeId, margin: f64) -> NodeId {
        let v = (self.scalar_value(x) + margin).max(0.0);
        self.push(vec![v], Op::Hinge(x, margin))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|&x| softplus(x)).collect();
        self.push(v, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|x| x.exp()).collect();
        self.push(v, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> NodeId {
        let rows = self.value(b).len();
        let cols = self.value(x).len();
        assert_eq!(self.value(w).len(), rows * cols, "affine weight shape mismatch");
        let wv = self.value(w);
        let xv = self.value(x);
        let out = self
            .value(b)
            .iter()
            .enumerate()
            .map(|(r, bias)| {
                let row = &wv[r * cols..(r + 1) * cols];
                bias + row.iter().zip(xv).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        self.push(out, Op::Affine { w, x, b })
    }

    /// Propagates `∂loss/∂node` back through the tape and adds the result to
    /// every parameter leaf's gradient in `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!("backward called on a node of length {}", self.value(loss).len())));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate(*id, &g),
                Op::Add(a, b) => {
                    add_into(&mut adj, *a, &g, self);
                    add_into(&mut adj, *b, &g, self);
                }
                Op::Sub(a, b) => {
                    add_into(&mut adj, *a, &g, self);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_into(&mut adj, *b, &neg, self);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    add_into(&mut adj, *a, &ga, self);
                    add_into(&mut adj, *b, &gb, self);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| c * x).collect();
                    add_into(&mut adj, *a, &ga, self);
                }
                Op::ScalarMul(a, b) => {
                    let av = self.scalar_value(*a);
                    let bv = self.scalar_value(*b);
                    add_into(&mut adj, *a, &[g[0] * bv], self);
                    add_into(&mut adj, *b, &[g[0] * av], self);
                }
                Op::Sum(terms) => {
                    for t in terms {
                        add_into(&mut adj, *t, &g, self);
                    }
                }
                Op::Norm(a) => {
                    let z = self.value(*a);
                    let sq: f64 = z.iter().map(|x| x * x).sum();
                    let denom = (sq + NORM_EPS).sqrt();
                    let ga: Vec<f64> = z.iter().map(|x| g[0] * x / denom).collect();
                    add_into(&mut adj, *a, &ga, self);
                }
                Op::SqNorm(a) => {
                    let ga: Vec<f64> = self.value(*a).iter().map(|x| 2.0 * g[0] * x).collect();
                    add_into(&mut adj, *a, &ga, self);
                }
                Op::AbsSum(a) => {
                    let ga: Vec<f64> = self.value(*a).iter().map(|x| g[0] * sign(*x)).collect();
                    add_into(&mut adj, *a, &ga, self);
                }
                Op::Hinge(x, margin) => {
                    if self.scalar_value(*x) + margin >= 0.0 {
                        add_into(&mut adj, *x, &g, self);
                    }
                }
                Op::Softplus(a) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*a)).map(|(gi, x)| gi * sigmoid(*x)).collect();
                    add_into(&mut adj, *a, &ga, self);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = g.iter().zip(&node.value).map(|(gi, e)| gi * e).collect();
                    add_into(&mut adj, *a, &ga, self);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g.iter().zip(&node.value).map(|(gi, t)| gi * (1.0 - t * t)).collect();
                    add_into(&mut adj, *a, &ga, self);
                }
                Op::Affine { w, x, b } => {
                    let cols = self.value(*x).len();
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    let mut gw = vec![0.0; wv.len()];
                    let mut gx = vec![0.0; cols];
                    for (r, gr) in g.iter().enumerate() {
                        let row = &wv[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            gw[r * cols + c] = gr * xv[c];
                            gx[c] += gr * row[c];
                        }
                    }
                    add_into(&mut adj, *w, &gw, self);
                    add_into(&mut adj, *x, &gx, self);
                    add_into(&mut adj, *b, &g, self);
                }
            }
        }
        Ok(())
    }
}

fn add_into(adj: &mut [Option<Vec<f64>>], n: NodeId, g: &[f64], tape: &Tape) {
    if matches!(tape.nodes[n.0].op, Op::Constant) {
        return;
    }
    match &mut adj[n.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, x)| *a += x),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
