//! Complex arithmetic on the graph via paired real tensors.
//!
//! A complex matrix is a `(re, im)` pair of real nodes; complex matmul is
//! built from four real matmuls. This keeps autodiff purely real.

use super::graph::{Graph, NodeId};
use crate::error::Result;

/// Real/imaginary node pair representing one complex tensor.
#[derive(Clone, Copy, Debug)]
pub struct CxNode {
    pub re: NodeId,
    pub im: NodeId,
}

impl CxNode {
    pub fn new(re: NodeId, im: NodeId) -> Self {
        CxNode { re, im }
    }
}

pub fn cx_add(g: &mut Graph, a: CxNode, b: CxNode) -> Result<CxNode> {
    Ok(CxNode {
        re: g.add(a.re, b.re)?,
        im: g.add(a.im, b.im)?,
    })
}

/// (Ar + jAi)(Br + jBi) = (ArBr - AiBi) + j(ArBi + AiBr)
pub fn cx_matmul(g: &mut Graph, a: CxNode, b: CxNode) -> Result<CxNode> {
    let rr = g.matmul(a.re, b.re)?;
    let ii = g.matmul(a.im, b.im)?;
    let ri = g.matmul(a.re, b.im)?;
    let ir = g.matmul(a.im, b.re)?;
    Ok(CxNode {
        re: g.sub(rr, ii)?,
        im: g.add(ri, ir)?,
    })
}

/// Conjugate transpose.
pub fn cx_hermitian(g: &mut Graph, a: CxNode) -> Result<CxNode> {
    let re = g.transpose(a.re)?;
    let imt = g.transpose(a.im)?;
    Ok(CxNode {
        re,
        im: g.mul_scalar(imt, -1.0),
    })
}

/// Elementwise squared modulus `re² + im²` (a real node).
pub fn cx_modsq(g: &mut Graph, a: CxNode) -> Result<NodeId> {
    let rr = g.mul(a.re, a.re)?;
    let ii = g.mul(a.im, a.im)?;
    g.add(rr, ii)
}

/// Rescale both parts so the stacked vector has unit L2 norm.
pub fn cx_normalize(g: &mut Graph, a: CxNode, eps: f64) -> Result<CxNode> {
    let modsq = cx_modsq(g, a)?;
    let s = g.sum(modsq);
    let s = g.add_scalar(s, eps);
    let root = g.sqrt(s);
    let inv = g.recip(root);
    Ok(CxNode {
        re: g.scale(a.re, inv)?,
        im: g.scale(a.im, inv)?,
    })
}
