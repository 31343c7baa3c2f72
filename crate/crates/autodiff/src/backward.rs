//! Reverse-mode differentiation.
//!
//! Every vector-Jacobian product is built from recorded primitives, so the
//! returned gradients are ordinary graph tensors and can be differentiated
//! again.

use crate::error::{AutodiffError, Result};
use crate::graph::{Op, Tensor};
use crate::ops::positive_mask;
use crate::real::Real;

/// Gradients returned by [`Tensor::backward`], one per requested tensor.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f64> {
    pub grads: Vec<Tensor<T>>,
    /// `true` where the requested tensor is not an ancestor of the output;
    /// its gradient is then an all-zero constant.
    pub disconnected: Vec<bool>,
}

impl<T: Real> Gradients<T> {
    pub fn any_disconnected(&self) -> bool {
        self.disconnected.iter().any(|&d| d)
    }
}

impl<T: Real> Tensor<T> {
    /// Gradient of this single-element tensor with respect to each of `wrt`.
    ///
    /// Only nodes that lie on a path from some `wrt` tensor to `self` are
    /// visited.
    pub fn backward(&self, wrt: &[&Tensor<T>]) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(AutodiffError::NotScalar(self.shape.clone()));
        }
        for w in wrt {
            if !w.graph.same(&self.graph) {
                return Err(AutodiffError::ForeignTensor { op: "backward" });
            }
        }
        let root = self.id;
        let lowest = wrt.iter().map(|w| w.id).min().unwrap_or(root + 1);

        // Nodes at ids > root cannot be ancestors in an append-only record.
        let mut reach = vec![false; root + 1];
        for w in wrt {
            if w.id <= root {
                reach[w.id] = true;
            }
        }
        for id in lowest..=root {
            if !reach[id] {
                reach[id] = self.graph.inputs_of(id).iter().any(|&i| reach[i]);
            }
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root + 1];
        let mut found: Vec<Option<Tensor<T>>> = vec![None; wrt.len()];
        if reach[root] {
            grads[root] = Some(self.graph.ones(&self.shape));
            for id in (lowest..=root).rev() {
                let Some(g) = grads[id].take() else {
                    continue;
                };
                for (k, w) in wrt.iter().enumerate() {
                    if w.id == id {
                        found[k] = Some(g.clone());
                    }
                }
                let (op, inputs, _) = self.graph.node_info(id);
                if matches!(op, Op::Leaf) {
                    continue;
                }
                let needed: Vec<bool> = inputs.iter().map(|&i| reach[i]).collect();
                let contributions = vjp(&self.graph.handle(id), &op, &inputs, &g, &needed)?;
                for (i, c) in inputs.iter().zip(contributions) {
                    if let Some(c) = c {
                        grads[*i] = Some(match grads[*i].take() {
                            Some(prev) => prev.add(&c)?,
                            None => c,
                        });
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        let mut disconnected = Vec::with_capacity(wrt.len());
        for (w, g) in wrt.iter().zip(found) {
            match g {
                Some(g) => {
                    out.push(g);
                    disconnected.push(false);
                }
                None => {
                    log::warn!(
                        "tensor {} is not an ancestor of {}; returning a zero gradient",
                        w.id,
                        root
                    );
                    out.push(self.graph.zeros(&w.shape));
                    disconnected.push(true);
                }
            }
        }
        Ok(Gradients {
            grads: out,
            disconnected,
        })
    }
}

/// Vector-Jacobian products of one node for the inputs flagged in `needed`.
fn vjp<T: Real>(
    out: &Tensor<T>,
    op: &Op<T>,
    inputs: &[usize],
    g: &Tensor<T>,
    needed: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let graph = out.graph();
    let x: Vec<Tensor<T>> = inputs.iter().map(|&i| graph.handle(i)).collect();
    let want = |k: usize| needed[k];
    let mut res: Vec<Option<Tensor<T>>> = vec![None; inputs.len()];

    match op {
        Op::Leaf => {}
        Op::Add => {
            if want(0) {
                res[0] = Some(g.sum_to(&x[0].shape)?);
            }
            if want(1) {
                res[1] = Some(g.sum_to(&x[1].shape)?);
            }
        }
        Op::Sub => {
            if want(0) {
                res[0] = Some(g.sum_to(&x[0].shape)?);
            }
            if want(1) {
                res[1] = Some(g.neg()?.sum_to(&x[1].shape)?);
            }
        }
        Op::Mul => {
            if want(0) {
                res[0] = Some(g.mul(&x[1])?.sum_to(&x[0].shape)?);
            }
            if want(1) {
                res[1] = Some(g.mul(&x[0])?.sum_to(&x[1].shape)?);
            }
        }
        Op::Div => {
            if want(0) {
                res[0] = Some(g.div(&x[1])?.sum_to(&x[0].shape)?);
            }
            if want(1) {
                // d(a/b)/db = -(a/b)/b
                res[1] = Some(g.mul(out)?.div(&x[1])?.neg()?.sum_to(&x[1].shape)?);
            }
        }
        Op::Neg => res[0] = Some(g.neg()?),
        Op::Scale(c) => res[0] = Some(g.scale(c.as_f64())?),
        Op::AddScalar(_) => res[0] = Some(g.clone()),
        Op::MatMul { ta, tb } => {
            let (ta, tb) = (*ta, *tb);
            if want(0) {
                res[0] = Some(if ta {
                    x[1].matmul_t(g, tb, true)?
                } else {
                    g.matmul_t(&x[1], false, !tb)?
                });
            }
            if want(1) {
                res[1] = Some(if tb {
                    g.matmul_t(&x[0], true, ta)?
                } else {
                    x[0].matmul_t(g, !ta, false)?
                });
            }
        }
        Op::Transpose => res[0] = Some(g.transpose()?),
        Op::Reshape => res[0] = Some(g.reshape(&x[0].shape)?),
        Op::SumTo => res[0] = Some(g.broadcast_to(&x[0].shape)?),
        Op::BroadcastTo => res[0] = Some(g.sum_to(&x[0].shape)?),
        Op::Concat { axis } => {
            let mut offset = 0;
            for (k, part) in x.iter().enumerate() {
                let len = part.shape[*axis];
                if want(k) {
                    res[k] = Some(g.narrow(*axis, offset, len)?);
                }
                offset += len;
            }
        }
        Op::Narrow { axis, start } => {
            res[0] = Some(g.pad(*axis, *start, x[0].shape[*axis])?);
        }
        Op::Pad { axis, start } => {
            res[0] = Some(g.narrow(*axis, *start, x[0].shape[*axis])?);
        }
        Op::IndexSelect { indices } => {
            res[0] = Some(g.index_add_shared(indices.clone(), x[0].shape[0])?);
        }
        Op::IndexAdd { indices } => {
            res[0] = Some(g.index_select_shared(indices.clone())?);
        }
        Op::Exp => res[0] = Some(g.mul(out)?),
        Op::Log => res[0] = Some(g.div(&x[0])?),
        Op::Sqrt => res[0] = Some(g.div(&out.scale(2.0)?)?),
        Op::Sigmoid => {
            // s (1 - s)
            let slope = out.mul(&out.neg()?.add_scalar(1.0)?)?;
            res[0] = Some(g.mul(&slope)?);
        }
        Op::Tanh => {
            let slope = out.square()?.neg()?.add_scalar(1.0)?;
            res[0] = Some(g.mul(&slope)?);
        }
        Op::Relu => {
            // The step function has zero derivative almost everywhere, so
            // the mask enters as a constant.
            let mask = graph.constant(positive_mask(&x[0].value()), &x[0].shape)?;
            res[0] = Some(g.mul(&mask)?);
        }
        Op::Softmax { axis } => {
            // y ⊙ (g − Σ_axis g⊙y)
            let dot = g.mul(out)?.sum_axis(*axis, true)?;
            res[0] = Some(g.sub(&dot)?.mul(out)?);
        }
    }
    Ok(res)
}
